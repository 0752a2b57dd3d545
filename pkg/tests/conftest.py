import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion id -> (status, detail); filled by the acceptance tests
ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    def record(cid: str, ok: bool | None, detail: str):
        # ok=None marks a criterion that cannot run here; it is reported and skipped
        if ok is None:
            ACCEPTANCE[cid] = ("SKIP", detail)
            pytest.skip(f"{cid}: {detail}")
        ACCEPTANCE[cid] = ("PASS" if ok else "FAIL", detail)
        assert ok, f"{cid}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        status, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid:<4} {status:<5} {detail}")
