import dataclasses

import numpy as np
import pytest

from sparsemvn.chains import Schedule
from sparsemvn.errors import InvalidParameter
from sparsemvn.exposure import default_grid
from sparsemvn.rng import make_rng
from sparsemvn.simulate import (MetricRow, ScenarioSpec, generate_replicate, kl_timing_benchmark,
                                metrics_from_details, parse_method, run_benchmark, scenario_G,
                                worker_count)

QUICK = Schedule(50, 50, 1)
FIRST = Schedule(100, 100, 1)


def _g(tag, x, y):
    grid = default_grid()
    return scenario_G(tag)[np.flatnonzero((np.isclose(grid[:, 0], x)) & np.isclose(grid[:, 1], y))[0]]


def test_scenario_tables():
    assert _g("A", 0.2, 1.0) == 3.0
    assert _g("A", 1.0, 1.8) == 1.0 and _g("A", 0.6, 0.6) == 0.0
    assert _g("B", 1.0, 1.0) == 3.0 and _g("B", 0.2, 0.2) == -1.0
    assert np.sum(scenario_G("A") != 0) == 8 and np.sum(scenario_G("B") != 0) == 12
    with pytest.raises(InvalidParameter):
        scenario_G("C")


def test_spec_defaults():
    s = ScenarioSpec()
    assert s.beta == (0.0, 1.0, 2.0) and s.sigma2_y == 0.64 and s.n_w == 20
    assert ScenarioSpec(outcome="binary").beta == (-7.0, 1.0, 2.0)
    with pytest.raises(InvalidParameter):
        ScenarioSpec(n_y=0)
    with pytest.raises(InvalidParameter):
        ScenarioSpec(beta=(1.0, 2.0))


def test_replicate_shapes_and_noise_free_monitors():
    rep = generate_replicate(ScenarioSpec(n_y=40, sigma_w=0.0), make_rng(1))
    assert np.array_equal(rep.W, rep.X)
    assert rep.locations.shape == (40, 2) and rep.K_star.shape == (40, 25)
    assert np.all((rep.sites >= 0) & (rep.sites <= 2)) and np.all((rep.Z >= 0) & (rep.Z <= 1))
    np.testing.assert_allclose(rep.X_star, 3 + rep.K_star @ scenario_G("A"))


def test_binary_event_rate_band():
    rates = [generate_replicate(ScenarioSpec(outcome="binary", n_y=1000), make_rng(r)).Y.mean()
             for r in range(20)]
    assert 0.001 <= np.mean(rates) <= 0.40


def test_parse_method():
    for m in ("true-exposure", "plugin", "sparse:5", "sparse:full", "dense", "fully-bayes"):
        assert parse_method(m) == m
    for bad in ("sparse:0", "sparse:x", "banded"):
        with pytest.raises(InvalidParameter):
            parse_method(bad)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("SPARSEMVN_THREADS", "3")
    assert worker_count() == 3 and worker_count(2) == 2
    monkeypatch.setenv("SPARSEMVN_THREADS", "many")
    with pytest.raises(InvalidParameter):
        worker_count()


def test_single_replicate_metrics():
    res = run_benchmark(ScenarioSpec(n_y=60), ["true-exposure"], 1, QUICK, seed=1, workers=1)
    row, det = res.rows[0], res.details[0]
    assert row.bias == pytest.approx(det["estimate"] - 1.0)
    assert row.rmse == pytest.approx(abs(row.bias))
    assert row.coverage_pct in (0.0, 100.0) and row.n_ok == 1


def test_metric_invariants_and_failures():
    details = [{"method": "m", "estimate": e, "ci_len": 0.2, "covered": c, "time_s": 1.0, "error": ""}
               for e, c in ((1.1, 1), (0.8, 0), (1.0, 1))]
    details.append({"method": "m", "estimate": np.nan, "ci_len": np.nan, "covered": 0,
                    "time_s": np.nan, "error": "NotPositiveDefinite: x"})
    row = metrics_from_details(details, ["m", "other"], 1.0)
    assert row[0].rmse >= abs(row[0].bias) and 0 <= row[0].coverage_pct <= 100
    assert row[0].n_ok == 3 and row[0].n_failed == 1
    assert np.isnan(row[1].bias) and row[1].n_ok == 0


def _strip_time(rows):
    return [dataclasses.replace(r, time_s=0.0) for r in rows]


def test_determinism_and_method_stream_independence():
    spec = ScenarioSpec(n_y=50)
    kw = dict(first_schedule=FIRST, workers=1)
    a = run_benchmark(spec, ["plugin", "sparse:3"], 2, QUICK, seed=5, **kw)
    b = run_benchmark(spec, ["plugin", "sparse:3"], 2, QUICK, seed=5, **kw)
    c = run_benchmark(spec, ["sparse:3"], 2, QUICK, seed=5, **kw)
    assert _strip_time(a.rows) == _strip_time(b.rows)
    # dropping a method does not change the other method's draws
    assert _strip_time(a.rows[1:]) == _strip_time(c.rows)
    d = run_benchmark(spec, ["plugin", "sparse:3"], 2, QUICK, seed=6, **kw)
    assert _strip_time(a.rows) != _strip_time(d.rows)


def test_pool_matches_serial():
    spec = ScenarioSpec(n_y=40)
    kw = dict(first_schedule=FIRST)
    serial = run_benchmark(spec, ["independent"], 2, QUICK, seed=3, workers=1, **kw)
    pooled = run_benchmark(spec, ["independent"], 2, QUICK, seed=3, workers=2, **kw)
    assert _strip_time(serial.rows) == _strip_time(pooled.rows)


def test_kl_benchmark_rows():
    rows = kl_timing_benchmark([60], [0, 2], replicates=2, n_samples=2, dense_samples=1)
    assert [r["k"] for r in rows] == ["0", "2", "dense"]
    kl = {r["k"]: r["kl_mean"] for r in rows}
    assert kl["0"] > kl["2"] > 0 and kl["dense"] == 0.0
    assert all(r["sample_time_mean_s"] > 0 for r in rows)


@pytest.mark.slow
def test_desk_method_ordering(scenario_a_desk):
    by = {r.method: r for r in scenario_a_desk.rows}
    assert by["plugin"].coverage_pct < by["sparse:5"].coverage_pct
    assert by["sparse:5"].rmse < by["plugin"].rmse
    assert by["independent"].ci_len < by["sparse:3"].ci_len
    for r in scenario_a_desk.rows:
        assert 0 <= r.coverage_pct <= 100 and r.rmse >= abs(r.bias)


@pytest.mark.slow
def test_true_exposure_calibration():
    res = run_benchmark(ScenarioSpec(n_y=500), ["true-exposure"], 200, Schedule(500, 400, 2),
                        seed=11, workers=1)
    assert 92 <= res.rows[0].coverage_pct <= 98
