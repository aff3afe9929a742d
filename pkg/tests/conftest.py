import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import GatewayHarness  # noqa: E402

from verde.store import Store  # noqa: E402


@pytest.fixture
def store(tmp_path):
    s = Store(str(tmp_path / "store"))
    yield s
    s.close()


@pytest.fixture
def harness(tmp_path):
    h = GatewayHarness(tmp_path)
    h.register_backend()
    return h
