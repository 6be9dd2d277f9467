"""errors.py — единая иерархия исключений hybrid-flow.

Библиотечный код только бросает; в коды возврата их превращает tool.main.
"""

from __future__ import annotations

from typing import Optional


class HybridFlowError(Exception):
    """Базовое исключение пакета."""


class MeshError(HybridFlowError):
    pass


class MeshFormatError(MeshError):
    def __init__(self, message: str, line: int = 0) -> None:
        self.line = int(line)
        super().__init__(f"line {self.line}: {message}" if self.line else message)


class MeshTopologyError(MeshError):
    pass


class MeshOrientationError(MeshError):
    def __init__(self, message: str, cell: Optional[int] = None) -> None:
        self.cell = cell
        super().__init__(message)


class InitialDataError(HybridFlowError):
    pass


class SolveError(HybridFlowError):
    def __init__(self, message: str, *, method: str = "", residual: float = float("nan")) -> None:
        self.method = method
        self.residual = float(residual)
        super().__init__(f"{message} (method={method}, relative residual={self.residual:.3e})")


class InvariantViolation(HybridFlowError):
    def __init__(self, invariant: str, step: int, value: float, cell: Optional[int] = None, detail: str = "") -> None:
        self.invariant = invariant
        self.step = int(step)
        self.value = float(value)
        self.cell = cell
        msg = f"invariant {invariant!r} violated at step {self.step}: value={self.value:.6e}"
        if cell is not None:
            msg += f", cell={cell}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)

    def to_dict(self) -> dict:
        return {
            "invariant": self.invariant,
            "step": self.step,
            "value": self.value,
            "cell": self.cell,
            "message": str(self),
        }


class ConfigError(HybridFlowError):
    pass


class StudyLevelError(HybridFlowError):
    """A study level failed in a worker; carries the worker's failure record."""

    def __init__(self, level: int, failure: dict) -> None:
        self.level = int(level)
        self.failure = dict(failure)
        super().__init__(f"level {self.level} failed: {self.failure.get('message', 'unknown error')}")

    def to_dict(self) -> dict:
        return {"level": self.level, **self.failure}


class CliError(Exception):
    """Ошибка уровня CLI: сообщение пользователю + код выхода."""

    def __init__(self, message: str, exit_code: int = 2) -> None:
        super().__init__(message)
        self.exit_code = int(exit_code)
