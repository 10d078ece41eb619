import numpy as np
import pytest

from metricverify.tensor import RngStream


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def stream():
    return RngStream(7, "init")


def uniform(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict: ``criterion(n, passed, detail)``."""
    verdicts = request.config.stash.setdefault(_VERDICTS, {})
    seen = []

    def record(n, passed, detail=""):
        verdicts[n] = (bool(passed), detail)
        seen.append(n)
        return bool(passed)

    yield record
    if not seen:
        n = int(request.node.name.split("_")[1])
        verdicts[n] = (False, "raised before reporting")


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_VERDICTS, {})
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        passed, detail = verdicts[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
