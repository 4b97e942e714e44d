import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from anticopy import barcode as bc

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def small_q4_layout():
    """12x12 modules of 4 px with a one-module training ring."""
    return bc.Layout(12, 12, 4, bc.LCAC_CONSTELLATION, training_border=1)


@pytest.fixture
def small_ecc():
    # 100 payload modules x 2 bits = 200 bits; one RS(24, 12) block = 192 bits
    return bc.EccConfig(24, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting -------------------------------------------------------

ACCEPTANCE_KEY = pytest.StashKey[dict]()
ACCEPTANCE_CRITERIA = 9


@pytest.fixture
def acceptance(request):
    """``record(n, ok, detail)`` stores one verdict per acceptance criterion."""
    log = request.config.stash.setdefault(ACCEPTANCE_KEY, {})
    n = int(request.node.name.split("_")[1].lstrip("c"))
    log[n] = (False, "errored before reaching a verdict")

    def record(n, ok, detail):
        log[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE_KEY, None)
    if log is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_CRITERIA + 1):
        if n in log:
            ok, detail = log[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: NOT RUN  (deselected)")
