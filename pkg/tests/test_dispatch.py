import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import corner_max_mismatch, enumerate_dispatch, random_instance
from taxirhc.dispatch import (DispatchInfeasible, DispatchInstance, brute_force_dispatch,
                              build_nominal_lp, build_robust_lp, evaluate_objective,
                              expected_end_position, round_first_step, solve_dispatch)
from taxirhc.lp import solve

# two regions side by side, each 0.1 deg wide; stations at the cell centres
W2 = np.array([[[0.05, 0.05], [0.05, 0.15]]])


def inst1(demand, beta, pos=(0.05, 0.05), alpha=1.0, **kw):
    return DispatchInstance(np.array([pos]), W2, np.zeros((0, 2, 2)), alpha, beta,
                            demand=np.array([demand], dtype=float), **kw)


def test_expected_end_position():
    W = np.array([[0.0, 0.0], [1.0, 2.0]])
    assert expected_end_position([0, 1], np.eye(2), W).tolist() == [1.0, 2.0]
    C = np.array([[0.5, 0.5], [0.0, 1.0]])
    assert expected_end_position([1, 0], C, W).tolist() == [0.5, 1.0]
    W3 = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
    assert np.allclose(expected_end_position(np.full(3, 1 / 3), np.eye(3), W3), [1.0, 1.0])
    with pytest.raises(ValueError):
        expected_end_position([1, 0], np.eye(3), W)


def test_all_weight_on_demanded_region():
    plan = solve_dispatch(inst1([0, 1], beta=0.0))
    assert plan.X1.tolist() == [[0.0, 1.0]]
    assert plan.objective.JE == pytest.approx(0.0)


def test_large_beta_keeps_taxi_home():
    plan = solve_dispatch(inst1([0, 1], beta=1e4))
    assert plan.X1.tolist() == [[1.0, 0.0]]
    assert plan.d[0, 0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("beta", [0.0, 0.5, 50.0])
def test_perfect_match(beta):
    # with beta = 0 the crossed pairing ties; only beta > 0 pins the identity
    W = np.array([[[0.05, 0.05], [0.05, 0.15]]] * 2)
    inst = DispatchInstance(np.array([[0.05, 0.05], [0.05, 0.15]]), W, np.zeros((0, 2, 2)), 1.0, beta,
                            demand=[[1.0, 1.0]])
    plan = solve_dispatch(inst)
    assert plan.objective.JE == pytest.approx(0.0, abs=1e-9)
    if beta > 0:
        assert plan.X1.tolist() == [[1, 0], [0, 1]]
        assert plan.objective.JD == pytest.approx(0.0, abs=1e-9)


def test_robust_degenerate_interval_is_nominal():
    rng = np.random.default_rng(5)
    for _ in range(20):
        nom = random_instance(rng, max_T=2)
        rob = DispatchInstance(nom.positions, nom.stations, nom.mobility, nom.alpha, nom.beta,
                               demand_lo=nom.demand, demand_hi=nom.demand)
        try:
            a, _ = build_nominal_lp(nom)
        except DispatchInfeasible:
            continue
        b, _ = build_robust_lp(rob)
        assert a.dump() == b.dump()
        sa, sb = solve(a), solve(b)
        assert sa.status is sb.status
        if sa.optimal:
            assert sa.objective == pytest.approx(sb.objective, abs=1e-8)


def test_inner_max_identity_example():
    assert corner_max_mismatch([0.5], [0.0], [2.0], 1.0) == 1.5


def test_round_first_step():
    assert round_first_step([[0.3, 0.7]]).tolist() == [[0, 1]]
    assert round_first_step([[0.5, 0.5]]).tolist() == [[1, 0]]
    assert round_first_step([[0, 1, 0]]).tolist() == [[0, 1, 0]]
    assert round_first_step([[0.5 - 1e-12, 0.5 + 1e-12]]).tolist() == [[1, 0]]


@given(st.lists(st.lists(st.floats(0, 1), min_size=3, max_size=3), min_size=1, max_size=6))
def test_rounding_one_hot(rows):
    X = np.array(rows) + 1e-3
    X /= X.sum(axis=1, keepdims=True)
    R = round_first_step(X)
    assert np.all(R.sum(axis=1) == 1)
    assert np.array_equal(round_first_step(R), R)


def test_evaluate_objective_examples():
    inst = inst1([1, 1], beta=0.0)
    assert evaluate_objective(np.array([[[0.5, 0.5]]]), inst).JE == pytest.approx(0.0)
    inst = inst1([1, 0], beta=2.0)
    obj = evaluate_objective(np.array([[[0.0, 1.0]]]), inst)
    assert obj.JE == pytest.approx(2.0)
    assert obj.JD == pytest.approx(0.1)
    assert obj.total == pytest.approx(2.2)


def test_evaluate_matches_lp_optimum():
    rng = np.random.default_rng(9)
    for _ in range(30):
        inst = random_instance(rng, robust=bool(rng.integers(2)))
        try:
            plan = solve_dispatch(inst)
        except DispatchInfeasible:
            continue
        assert plan.objective.total == pytest.approx(plan.lp_objective, abs=1e-8)
        assert np.all(np.abs(plan.X.sum(axis=2) - 1) <= 1e-6)
        assert np.all(plan.d <= inst.alpha + 1e-9)
        assert np.all(plan.X1.sum(axis=1) == 1)


def test_brute_force_guard_and_agreement():
    rng = np.random.default_rng(1)
    big = random_instance(rng)
    with pytest.raises(ValueError):
        brute_force_dispatch(big, limit=1)
    for _ in range(25):
        inst = random_instance(rng, robust=bool(rng.integers(2)))
        ref, _ = enumerate_dispatch(inst)
        if not np.isfinite(ref):
            with pytest.raises(DispatchInfeasible):
                brute_force_dispatch(inst)
            continue
        assert brute_force_dispatch(inst).objective.total == pytest.approx(ref, abs=1e-9)


def test_binary_lp_solution_agrees_with_brute_force():
    inst = DispatchInstance(np.array([[0.05, 0.15]]), W2, np.zeros((0, 2, 2)), 1.0, 0.1, demand=[[0, 3]])
    plan = solve_dispatch(inst)
    assert np.all((plan.X == 0) | (plan.X == 1))
    assert brute_force_dispatch(inst).objective.total == pytest.approx(plan.lp_objective, abs=1e-9)


def test_relaxation_bound_two_step():
    rng = np.random.default_rng(11)
    done = 0
    while done < 10:
        inst = random_instance(rng, max_N=2, max_n=2, max_T=2)
        if inst.T != 2:
            continue
        try:
            plan = solve_dispatch(inst)
        except DispatchInfeasible:
            continue
        ref, _ = enumerate_dispatch(inst)
        assert plan.lp_objective <= ref + 1e-9
        done += 1


def test_robust_dominates_nominal():
    rng = np.random.default_rng(4)
    for _ in range(30):
        rob = random_instance(rng, robust=True)
        mid = (rob.demand_lo + rob.demand_hi) / 2
        nom = DispatchInstance(rob.positions, rob.stations, rob.mobility, rob.alpha, rob.beta, demand=mid)
        try:
            a = solve_dispatch(nom).lp_objective
        except DispatchInfeasible:
            continue
        assert solve_dispatch(rob).lp_objective >= a - 1e-9


def test_beta_monotone_tradeoff():
    rng = np.random.default_rng(21)
    base = random_instance(rng, max_N=5, max_n=3, max_T=1)
    while base.N < 4 or base.n < 3:
        base = random_instance(rng, max_N=5, max_n=3, max_T=1)
    base.alpha[:] = 10.0
    prev_je, prev_jd = -np.inf, np.inf
    for beta in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0]:
        inst = DispatchInstance(base.positions, base.stations, base.mobility, base.alpha, beta,
                                demand=base.demand)
        obj = solve_dispatch(inst).objective
        assert obj.JE >= prev_je - 1e-9
        assert obj.JD <= prev_jd + 1e-9
        prev_je, prev_jd = obj.JE, obj.JD


def test_unreachable_taxi_is_reported():
    inst = inst1([0, 1], beta=0.0, pos=(1.0, 1.0), alpha=0.05)
    with pytest.raises(DispatchInfeasible) as e:
        solve_dispatch(inst)
    assert e.value.taxi == 0


def test_instance_validation():
    with pytest.raises(ValueError):
        inst1([0, 0], beta=0.0)
    with pytest.raises(ValueError):
        inst1([0, 1], beta=-1.0)
    with pytest.raises(ValueError):
        DispatchInstance(np.zeros((1, 2)), W2, np.zeros((0, 2, 2)), 1.0, 0.0,
                         demand_lo=[[2, 0]], demand_hi=[[1, 1]])
    with pytest.raises(ValueError):
        DispatchInstance(np.zeros((1, 2)), W2, np.full((1, 2, 2), 0.6), 1.0, [0.0, 0.0],
                         demand=[[1, 1], [1, 1]])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_solver_plans_valid(seed):
    inst = random_instance(np.random.default_rng(seed))
    try:
        plan = solve_dispatch(inst)
    except DispatchInfeasible:
        return
    assert plan.alpha_slack >= 0
    assert np.all(plan.X >= -1e-9) and np.all(plan.X <= 1 + 1e-9)
    again = solve_dispatch(inst)
    assert np.array_equal(again.X, plan.X)
