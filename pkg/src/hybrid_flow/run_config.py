"""run_config.py — конфигурация запуска: RunConfig, загрузка INI/JSON со слоями.

Порядок слияния (от слабого к сильному):
  поля по умолчанию -> --defaults -> extends[0] -> extends[1] -> ... -> сам файл -> --set key=value
  extends разворачиваются рекурсивно; цикл в extends даёт ConfigError.

Секции INI ([run], [mesh], [time], [output]) организационные, ключи совпадают с именами полей RunConfig.
Каждый слой сначала сплющивается в плоский dict, затем сливается через _deep_merge.
"""

from __future__ import annotations

import configparser
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

from .errors import ConfigError
from .mesh import FAMILIES

OUTPUT_ENV = "HYBRID_FLOW_OUT"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}
_META_KEYS = {"extends", "_extends"}


@dataclass
class RunConfig:
    case: str = "guermond"
    family: str = "triangular"   # triangular | cartesian | hexagonal | путь к файлу сетки
    levels: int = 4
    level: int = 0
    dt0: float = 1e-3
    t_final: float = 1.0
    mu: float = 1.0
    picard_iterations: int = 0
    picard_tol: float = 1e-10
    diagnostics_every: int = 1
    vtk_every: int = 0
    output_dir: str = "out"
    emit_vtk: bool = False
    emit_matrix: bool = False
    workers: int = 1
    seed: int = 0
    check_invariants: bool = True

    @property
    def family_is_file(self) -> bool:
        return self.family not in FAMILIES

    def dt_for_level(self, level: int) -> float:
        return self.dt0 / 2 ** int(level)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(d: Mapping[str, Any]) -> "RunConfig":
        """Типизированный RunConfig из плоского dict; строки (INI, --set) приводятся к типам."""
        kwargs = {}
        for f in fields(RunConfig):
            if f.name in d:
                kwargs[f.name] = coerce_value(f.name, d[f.name])
        return RunConfig(**kwargs)


FIELD_TYPES: dict[str, type] = {
    "case": str, "family": str, "levels": int, "level": int, "dt0": float, "t_final": float,
    "mu": float, "picard_iterations": int, "picard_tol": float, "diagnostics_every": int,
    "vtk_every": int, "output_dir": str, "emit_vtk": bool, "emit_matrix": bool, "workers": int,
    "seed": int, "check_invariants": bool,
}


def coerce_value(key: str, value: Any) -> Any:
    tp = FIELD_TYPES.get(key)
    if tp is None:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if tp is bool:
            if isinstance(value, bool):
                return value
            s = str(value).strip().lower()
            if s in _TRUE:
                return True
            if s in _FALSE:
                return False
            raise ValueError(value)
        if tp is int:
            if isinstance(value, bool):
                raise ValueError(value)
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if tp is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        return str(value).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {tp.__name__}, got {value!r}") from None


# ----------------------------
# слои
# ----------------------------

def _deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """dict + dict -> рекурсивно; остальное: override заменяет base."""
    out: dict[str, Any] = dict(base)
    for k, v in (override or {}).items():
        if k in out and isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _flatten(raw: Mapping[str, Any]) -> dict[str, Any]:
    """Секции поднимаются на верхний уровень; ключ верхнего уровня сильнее ключа секции того же слоя."""
    out: dict[str, Any] = {}
    for k, v in raw.items():
        if isinstance(v, dict):
            out.update(v)
    for k, v in raw.items():
        if not isinstance(v, dict):
            out[k] = v
    return out


def _load_ini(path: Path) -> dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with path.open("r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raw: dict[str, Any] = {}
    for section in parser.sections():
        raw[section] = dict(parser.items(section))
    raw.update(dict(parser.defaults()))
    return raw


def load_config_dict(path: str | Path) -> dict[str, Any]:
    """Один слой как плоский dict (``extends`` остаётся вызывающему)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    if p.suffix.lower() == ".json":
        try:
            obj = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{p}: config must be a JSON object")
        return _flatten(obj)
    return _flatten(_load_ini(p))


def _extends_list(raw: Mapping[str, Any]) -> list[str]:
    ext = raw.get("extends") or raw.get("_extends")
    if isinstance(ext, str):
        return [piece.strip() for piece in ext.split(",") if piece.strip()]
    if isinstance(ext, list):
        return [x for x in ext if isinstance(x, str) and x.strip()]
    return []


def _resolve_file(path: Path, chain: tuple[Path, ...] = ()) -> dict[str, Any]:
    """Файл поверх своих extends (рекурсивно, пути относительно самого файла)."""
    key = path.resolve()
    if key in chain:
        cycle = " -> ".join(str(p) for p in (*chain, key))
        raise ConfigError(f"extends cycle: {cycle}")
    raw = load_config_dict(path)
    merged: dict[str, Any] = {}
    for rel in _extends_list(raw):
        p = Path(rel)
        if not p.is_absolute():
            p = path.parent / p
        merged = _deep_merge(merged, _resolve_file(p, (*chain, key)))
    return _deep_merge(merged, {k: v for k, v in raw.items() if k not in _META_KEYS})


def parse_overrides(items: Optional[Iterable[str]]) -> dict[str, Any]:
    """Строки ``key=value``; префикс ``section.key`` допускается и отбрасывается."""
    out: dict[str, Any] = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip().split(".")[-1]
        if not key:
            raise ConfigError(f"override has an empty key: {item!r}")
        out[key] = value.strip()
    return out


def merge_config_layers(
    path: Optional[str | Path],
    *,
    defaults_path: Optional[str | Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> dict[str, Any]:
    """Слитый сырой dict (без валидации) в порядке слоёв, описанном выше."""
    merged: dict[str, Any] = {}
    if defaults_path:
        merged = _deep_merge(merged, load_config_dict(defaults_path))
    if path is not None:
        merged = _deep_merge(merged, _resolve_file(Path(path)))
    if overrides:
        merged = _deep_merge(merged, dict(overrides))
    return merged


def load_run_config(
    path: Optional[str | Path],
    *,
    defaults_path: Optional[str | Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    merged = merge_config_layers(path, defaults_path=defaults_path, overrides=overrides)
    unknown = sorted(set(merged) - set(FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig.from_dict(merged)


def resolve_output_dir(cfg: RunConfig, env: Optional[Mapping[str, str]] = None) -> Path:
    """output_dir; относительный путь разрешается от $HYBRID_FLOW_OUT."""
    env = os.environ if env is None else env
    out = Path(cfg.output_dir).expanduser()
    root = (env.get(OUTPUT_ENV) or "").strip()
    if root and not out.is_absolute():
        out = Path(root).expanduser() / out
    return out


def save_run_config(cfg: RunConfig, path: str | Path) -> Path:
    """Записать итоговую конфигурацию (INI, либо JSON для пути .json)."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    d = cfg.to_dict()
    if p.suffix.lower() == ".json":
        p.write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p
    parser = configparser.ConfigParser(interpolation=None)
    sections = {
        "run": ("case", "mu", "picard_iterations", "picard_tol", "seed", "check_invariants", "workers"),
        "mesh": ("family", "levels", "level"),
        "time": ("dt0", "t_final", "diagnostics_every"),
        "output": ("output_dir", "emit_vtk", "emit_matrix", "vtk_every"),
    }
    for name, keys in sections.items():
        parser[name] = {k: repr(d[k]) if isinstance(d[k], float) else str(d[k]).lower() if isinstance(d[k], bool) else str(d[k]) for k in keys}
    with p.open("w", encoding="utf-8") as fh:
        parser.write(fh)
    return p
