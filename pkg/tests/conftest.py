import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""
    def _report(number, ok, detail):
        ok = bool(ok)
        _ACCEPTANCE.append((number, ok, detail))
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_spd(rng, n, cond=50.0):
    A = rng.standard_normal((n, n))
    Qm, _ = np.linalg.qr(A)
    lam = np.exp(rng.uniform(0.0, np.log(cond), n))
    S = (Qm * lam) @ Qm.T
    return 0.5 * (S + S.T)


_DESK = {}


@pytest.fixture(scope="session")
def scenario_a_desk():
    """Scenario A, continuous, n_y = 500, 50 replicates, desk schedule (shared)."""
    if "res" not in _DESK:
        from sparsemvn.chains import Schedule
        from sparsemvn.simulate import ScenarioSpec, run_benchmark
        _DESK["res"] = run_benchmark(ScenarioSpec("A", "continuous", n_y=500),
                                     ["plugin", "independent", "sparse:3", "sparse:5"],
                                     50, Schedule(2000, 400, 5), seed=7, workers=1)
    return _DESK["res"]
