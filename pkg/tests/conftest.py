import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))


@pytest.fixture(autouse=True)
def isolated_environment(monkeypatch):
    """Keep a developer's ledger and thread settings out of the suite."""
    monkeypatch.delenv("BEAMFUSE_DATABASE_URL", raising=False)
    monkeypatch.delenv("BEAMFUSE_THREADS", raising=False)
