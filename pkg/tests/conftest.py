import sys
from pathlib import Path

import pytest

# src/ импортируется без editable-установки
ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from hybrid_flow.run_config import OUTPUT_ENV  # noqa: E402


@pytest.fixture(autouse=True)
def _isolated_output_root(monkeypatch):
    """Relative output_dir must not leak into a developer's $HYBRID_FLOW_OUT."""
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
