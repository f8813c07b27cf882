"""Independent reference implementations used only by the tests.

Nothing here calls into the package's solver or objective code: the LP oracle
enumerates vertices directly, and the dispatch oracle recomputes the cost of
every binary assignment from the raw instance arrays.
"""

import itertools

import numpy as np

from taxirhc.dispatch import DispatchInstance
from taxirhc.geo import RegionGrid, generate_stations
from taxirhc.lp import LinearProgram


# ---------------------------------------------------------------- LP oracle

def vertex_enumeration(lp: LinearProgram, feas_tol=1e-7):
    """Optimal value of a box-bounded LP by enumerating basic solutions.

    Every variable must have finite bounds, so the feasible set (if nonempty)
    is a polytope and the optimum sits at a vertex. Returns ``(value, x)`` or
    ``(None, None)`` when infeasible.
    """
    v = lp.num_vars
    assert np.all(np.isfinite(lp.lb)) and np.all(np.isfinite(lp.ub)), "oracle needs finite bounds"
    G = np.vstack([lp.A_ub, np.eye(v), -np.eye(v)])
    h = np.concatenate([lp.b_ub, lp.ub, -lp.lb])
    E, f = _independent_rows(lp.A_eq, lp.b_eq)
    me = E.shape[0]
    best, best_x = None, None
    k = v - me
    if k < 0:
        combos = [()]
    else:
        combos = list(itertools.combinations(range(G.shape[0]), k))
    if not combos:
        return None, None
    idx = np.array(combos, dtype=int).reshape(len(combos), k)
    M = np.concatenate([np.broadcast_to(E, (len(combos), me, v)), G[idx]], axis=1)
    rhs = np.concatenate([np.broadcast_to(f, (len(combos), me)), h[idx]], axis=1)
    if M.shape[1] != v:
        # more equalities than variables: least squares then check
        x, *_ = np.linalg.lstsq(E, f, rcond=None)
        cand = x[None]
    else:
        det = np.linalg.det(M)
        ok = np.abs(det) > 1e-10
        if not ok.any():
            return None, None
        cand = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
    feas = np.all(cand @ G.T <= h + feas_tol, axis=1)
    if lp.b_eq.size:
        feas &= np.all(np.abs(cand @ lp.A_eq.T - lp.b_eq) <= feas_tol, axis=1)
    if not feas.any():
        return None, None
    vals = cand[feas] @ lp.c
    j = int(np.argmin(vals))
    best, best_x = float(vals[j]), cand[feas][j]
    return best, best_x


def _independent_rows(E, f):
    keep = []
    for r in range(E.shape[0]):
        if np.linalg.matrix_rank(E[keep + [r]]) == len(keep) + 1:
            keep.append(r)
    return E[keep], f[keep]


def random_box_lp(rng, max_vars=6):
    """Random LP with finite bounds; roughly a fifth of them are infeasible."""
    v = int(rng.integers(1, max_vars + 1))
    mu = int(rng.integers(0, 5))
    me = int(rng.integers(0, min(v, 3) + 1)) if rng.random() < 0.6 else 0
    c = rng.normal(size=v).round(2)
    lb = rng.uniform(-3, 0, v).round(2)
    ub = lb + rng.uniform(0.5, 4, v).round(2)
    x0 = rng.uniform(lb, ub)
    A_ub = rng.normal(size=(mu, v)).round(2)
    A_eq = rng.normal(size=(me, v)).round(2)
    if rng.random() < 0.2:
        # push x0 out of some row to make infeasibility likely
        b_ub = A_ub @ x0 - rng.uniform(0, 3, mu)
    else:
        b_ub = A_ub @ x0 + rng.uniform(0, 1, mu)
    b_eq = A_eq @ x0
    if me and rng.random() < 0.3:
        # exact duplicate equality row
        A_eq = np.vstack([A_eq, A_eq[:1]])
        b_eq = np.concatenate([b_eq, b_eq[:1]])
    if rng.random() < 0.2:
        c[rng.integers(v)] = 0.0
    return LinearProgram(c, A_ub, b_ub, A_eq, b_eq, lb, ub), x0


# ---------------------------------------------------------- dispatch oracle

def random_instance(rng, max_N=5, max_n=3, max_T=2, robust=False, beta=None):
    N = int(rng.integers(1, max_N + 1))
    cols = int(rng.integers(1, max_n + 1))
    n = cols
    T = int(rng.integers(1, max_T + 1))
    grid = RegionGrid(0.0, 0.1, 0.0, 0.1 * cols, 1, cols)
    stations = generate_stations(grid, N, int(rng.integers(2**31))).coords
    positions = np.column_stack([rng.uniform(0, 0.1, N), rng.uniform(0, 0.1 * cols, N)])
    mobility = rng.dirichlet(np.ones(n), size=(max(T - 1, 0), n))
    span = 0.1 + 0.1 * cols
    alpha = rng.uniform(0.3, 1.2, (T, N)) * span
    beta = rng.uniform(0, 3, T) if beta is None else np.full(T, beta)
    if robust:
        lo = rng.integers(0, 5, (T, n)).astype(float)
        hi = lo + rng.integers(0, 4, (T, n))
        hi[:, 0] += (hi.sum(axis=1) == 0)
        return DispatchInstance(positions, stations, mobility, alpha, beta,
                                demand_lo=lo, demand_hi=hi)
    demand = rng.integers(0, 6, (T, n)).astype(float)
    demand[:, 0] += (demand.sum(axis=1) == 0)
    return DispatchInstance(positions, stations, mobility, alpha, beta, demand=demand)


def corner_max_mismatch(share, lo, hi, total):
    """max over the 2^n corner demands of ||share - r/total||_1, by enumeration."""
    best = -np.inf
    for corner in itertools.product(*zip(lo, hi)):
        best = max(best, float(np.abs(np.asarray(share) - np.asarray(corner) / total).sum()))
    return best


def assignment_cost(assign, inst: DispatchInstance, worst_case: bool):
    """Cost of one binary plan ``assign[k][i] -> region`` or None if a cap is broken."""
    cost = plan_costs(np.asarray(assign)[None], inst, worst_case)[0]
    return None if np.isinf(cost) else float(cost)


def plan_costs(plans, inst: DispatchInstance, worst_case: bool):
    """Costs of a batch of binary plans ``(P, T, N)``; +inf where a distance cap is broken."""
    P = plans.shape[0]
    N, n, T = inst.N, inst.n, inst.T
    W = inst.stations
    taxi = np.arange(N)
    total = np.zeros(P)
    prev = None
    for k in range(T):
        X = np.zeros((P, N, n))
        X[np.arange(P)[:, None], taxi, plans[:, k]] = 1.0
        share = X.sum(axis=1) / N
        if worst_case:
            lo, hi = inst.demand_lo[k], inst.demand_hi[k]
            R = (lo.sum() + hi.sum()) / 2
            corners = np.array(list(itertools.product(*zip(lo, hi))))
            total += np.abs(share[:, None, :] - corners[None] / R).sum(axis=2).max(axis=1)
        else:
            r = inst.demand[k]
            total += np.abs(share - r / r.sum()).sum(axis=1)
        if k == 0:
            start = np.broadcast_to(inst.positions, (P, N, 2))
        else:
            start = np.einsum("pij,jl,ilc->pic", prev, inst.mobility[k - 1], W)
        dest = W[taxi, plans[:, k]]
        d = np.abs(start - dest).sum(axis=2)
        total = np.where(np.any(d > inst.alpha[k] + 1e-12, axis=1), np.inf, total)
        total += inst.beta[k] * d.sum(axis=1)
        prev = X
    return total


def enumerate_dispatch(inst: DispatchInstance, worst_case=None):
    """Minimum cost over every binary assignment sequence; ``(cost, plan)``."""
    worst_case = inst.robust if worst_case is None else worst_case
    plans = np.array(list(itertools.product(range(inst.n), repeat=inst.N * inst.T)), dtype=int)
    plans = plans.reshape(-1, inst.T, inst.N)
    costs = plan_costs(plans, inst, worst_case)
    j = int(np.argmin(costs))
    return float(costs[j]), plans[j]
