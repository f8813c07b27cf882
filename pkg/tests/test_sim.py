import filecmp
import math

import numpy as np
import pytest

from taxirhc.demand import DemandModel
from taxirhc.geo import GeoPoint, RegionGrid, StationTable
from taxirhc.rhc import RhcConfig
from taxirhc.sim import (Request, SimMetrics, SimScenario, compare_metrics, model_from_scenario,
                         run_baseline, run_dispatch_sim, run_replay_baseline, skewed_rates,
                         supply_demand_error, synthesize_scenario, uniform_destinations)
from taxirhc.trace import TraceRecord, trace_mileage

SF = RegionGrid(37.70, 37.81, -122.51, -122.39, 3, 3)
TWO = RegionGrid(0.0, 0.1, 0.0, 0.2, 1, 2)


def metrics(mismatch, idle, t2=60):
    k = len(mismatch)
    z = np.zeros((k, 1))
    return SimMetrics(t2, np.asarray(mismatch, float), np.asarray(idle, float), z, z, z, fleet_size=1)


def test_zero_rates_no_requests():
    sc = synthesize_scenario(SF, 5, np.zeros((24, 9)), seed=1)
    assert sc.requests == []


def test_poisson_rates_recovered():
    lam = np.array([0.5, 2.0])
    sc = synthesize_scenario(TWO, 1, np.tile(lam, (1440, 1)), slot_minutes=1, seed=3, days=7)
    slots = 1440 * 7
    counts = np.bincount([r.origin_region for r in sc.requests], minlength=2) / slots
    assert np.all(np.abs(counts - lam) <= 3 * np.sqrt(lam / slots))
    for r in sc.requests[:200]:
        assert TWO.locate(*r.origin) == r.origin_region
        assert TWO.locate(*r.dest) == r.dest_region


def test_synthesis_deterministic():
    rates = skewed_rates(9, 20, [0, 8], 0.8)
    a = synthesize_scenario(SF, 10, rates, seed=4)
    b = synthesize_scenario(SF, 10, rates, seed=4)
    assert a.requests == b.requests
    assert np.array_equal(a.initial_positions, b.initial_positions)
    assert a.requests != synthesize_scenario(SF, 10, rates, seed=5).requests


def test_skewed_rates():
    r = skewed_rates(9, 10.0, [0, 8], 0.8)
    assert r.shape == (24, 9)
    assert r[0, [0, 8]].sum() == pytest.approx(8.0)
    assert r[0].sum() == pytest.approx(10.0)
    assert np.allclose(skewed_rates(3, 3.0, [0, 1, 2], 0.5), 1.0)


def test_scenario_validation():
    with pytest.raises(ValueError):
        SimScenario(SF, 1, 60, -np.ones((24, 9)), uniform_destinations(24, 9), 0)
    bad = uniform_destinations(24, 9)
    bad[0, 0, 0] = 0.5
    with pytest.raises(ValueError):
        SimScenario(SF, 1, 60, np.ones((24, 9)), bad, 0)
    with pytest.raises(ValueError):
        SimScenario(SF, 1, 60, np.ones((23, 9)), uniform_destinations(23, 9), 0)


def test_supply_demand_error():
    assert supply_demand_error([1, 1], [2, 2]) == 0.0
    assert supply_demand_error([2, 0], [0, 5]) == 2.0
    assert supply_demand_error([0, 0], [1, 1]) == 0.0
    assert supply_demand_error([1, 1], [0, 0]) == 0.0


def _flat_model(mean, t1=60, t2=60):
    mean = np.asarray(mean, float)
    n = mean.shape[1]
    return DemandModel(t1, t2, mean, np.zeros_like(mean), np.ones_like(mean), mean, mean,
                       np.broadcast_to(np.eye(n), (1440 // t2, n, n)))


def test_no_demand_means_no_idle_miles():
    sc = synthesize_scenario(SF, 6, np.zeros((24, 9)), seed=2)
    model = model_from_scenario(sc, 60, 60, history_days=3, B=5)
    res = run_dispatch_sim(sc, model, RhcConfig(beta=1.0))
    assert res.metrics.total_idle == 0.0
    assert all(o.from_region == o.to_region for o in res.orders)


def test_single_request_at_station():
    W = np.array([[[0.05, 0.05], [0.05, 0.15]]])
    stations = StationTable((0,), W)
    sc = SimScenario(TWO, 1, 60, np.zeros((24, 2)), uniform_destinations(24, 2), seed=0)
    sc.initial_positions = np.array([[0.05, 0.15]])
    sc.requests = [Request(0, 10.0, (0.05, 0.15), 1, (0.05, 0.05), 0)]
    mean = np.zeros((24, 2))
    mean[0] = [0.0, 1.0]  # demand only during the request's hour
    model = _flat_model(mean)
    res = run_dispatch_sim(sc, model, RhcConfig(beta=1.0, horizon=1), stations)
    m = res.metrics
    assert m.served == 1 and m.expired == 0
    assert m.total_idle == 0.0
    assert m.taxi_occupied[0] == pytest.approx(0.1 * 70.0)


def test_requests_expire_at_slot_end():
    sc = SimScenario(TWO, 1, 60, np.zeros((24, 2)), uniform_destinations(24, 2), seed=0)
    sc.initial_positions = np.array([[0.05, 0.05]])
    sc.requests = [Request(0, 10.0, (0.05, 0.15), 1, (0.05, 0.15), 1)]
    m = run_baseline(sc, 30)
    assert m.served == 0 and m.expired == 1


@pytest.fixture(scope="module")
def skewed_runs():
    rates = skewed_rates(9, 30, [2], 0.9)
    # park the whole fleet in the far corner from the hotspot
    sc = synthesize_scenario(SF, 12, rates, seed=7)
    lo, hi = SF.cell_bounds(7)[:2], SF.cell_bounds(7)[2:]
    rng = np.random.default_rng(0)
    sc.initial_positions = np.column_stack([rng.uniform(*lo, 12), rng.uniform(*hi, 12)])
    model = model_from_scenario(sc, 60, 60, history_days=6, B=20, seed=7)
    cfg = RhcConfig(beta=0.5, alpha=0.25)
    return sc, model, cfg, run_dispatch_sim(sc, model, cfg), run_baseline(sc, 60)


def test_dispatch_beats_baseline_on_skewed_demand(skewed_runs):
    _, _, _, res, base = skewed_runs
    assert base.mean_mismatch > 0
    assert res.metrics.mean_mismatch < base.mean_mismatch


def test_metric_invariants(skewed_runs):
    sc, _, _, res, base = skewed_runs
    for m in (res.metrics, base):
        assert m.num_slots == 24
        assert np.all((m.mismatch >= 0) & (m.mismatch <= 2))
        assert np.all(m.idle_miles >= 0)
        assert np.all(m.state_counts.sum(axis=1) == sc.fleet_size)
        assert np.array_equal(m.taxi_total, m.taxi_idle + m.taxi_occupied)
        assert math.isclose(math.fsum(m.idle_miles), math.fsum(m.taxi_idle), rel_tol=1e-12)
        assert m.hourly_idle().sum() == pytest.approx(m.total_idle)
        assert m.served + m.expired == len(sc.requests)
    per_step = np.bincount([o.step for o in res.orders], minlength=24)
    assert per_step.size == 24 and np.all(per_step <= sc.fleet_size)


def test_dispatch_deterministic(skewed_runs, tmp_path):
    sc, model, cfg, res, _ = skewed_runs
    again = run_dispatch_sim(sc, model, cfg)
    res.metrics.to_csv(tmp_path / "a.csv")
    again.metrics.to_csv(tmp_path / "b.csv")
    res.write_orders(tmp_path / "oa.csv")
    again.write_orders(tmp_path / "ob.csv")
    assert filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)
    assert filecmp.cmp(tmp_path / "oa.csv", tmp_path / "ob.csv", shallow=False)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "slot,mismatch_error,idle_miles"
    assert (tmp_path / "oa.csv").read_text().splitlines()[0] == \
        "step,taxi_id,from_region,to_region,target_lat,target_lon"


def test_compare_metrics():
    a = metrics([0.4, 0.2], [2.0, 2.519])
    assert compare_metrics(a, a)["idle_change_pct"] == 0.0
    assert compare_metrics(a, a)["mismatch_change_pct"] == 0.0
    b = metrics([0.2, 0.1], [1.0, 1.056])
    rep = compare_metrics(a, b)
    assert rep["idle_change_pct"] == pytest.approx((2.056 - 4.519) / 4.519 * 100)
    assert rep["idle_change_pct"] == pytest.approx(-54.5, abs=0.05)
    assert rep["mismatch_change_pct"] == pytest.approx(-50.0)
    z = metrics([0.0], [0.0])
    assert compare_metrics(z, z)["idle_change_pct"] == 0.0
    with pytest.raises(ValueError):
        compare_metrics(a, metrics([0.1], [1.0]))


def _still(taxi, lat, lon, ts, occ=False):
    return [TraceRecord(taxi, GeoPoint(lat, lon), occ, t) for t in ts]


def test_replay_still_fleet_without_requests():
    recs = {"a": _still("a", 0.05, 0.05, range(0, 7200, 600)), "b": _still("b", 0.05, 0.15, range(0, 7200, 900))}
    m = run_replay_baseline(recs, TWO, 60)
    assert m.num_slots == 2
    assert np.all(m.mismatch == 0) and m.total_idle == 0.0


def test_replay_idle_equals_vacant_trace_mileage():
    rng = np.random.default_rng(8)
    recs = {}
    for tid in "abc":
        t = np.cumsum(rng.integers(30, 600, 60))
        recs[tid] = [TraceRecord(tid, GeoPoint(float(la), float(lo)), bool(o), int(ts))
                     for la, lo, o, ts in zip(rng.uniform(0, 0.1, 60), rng.uniform(0, 0.2, 60),
                                              rng.integers(0, 2, 60), t)]
    m = run_replay_baseline(recs, TWO, 30)
    ref = math.fsum(trace_mileage(r, "vacant") for r in recs.values())
    assert m.total_idle == pytest.approx(ref, rel=1e-12)
    assert np.all((m.mismatch >= 0) & (m.mismatch <= 2))
