import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cfiot.netmodel import FadingMap, SystemConfig

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def desk():
    return SystemConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_config(**kw):
    base = dict(L=4, N=2, K=6, K_a=3, tau=8, T_c=200)
    base.update(kw)
    return SystemConfig(**base)


def fading_from(beta):
    return FadingMap(np.asarray(beta, dtype=float))


# one verdict line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def report(n, ok, detail):
    prev = ACCEPTANCE.get(n)
    ok = ok and (prev is None or prev[0])
    detail = detail if prev is None else f"{prev[1]}; {detail}"
    ACCEPTANCE[n] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
