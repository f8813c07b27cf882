"""Dispatch LPs (nominal and interval-robust), rounding and a brute-force oracle.

Variables for period ``k`` (0-based here) are laid out contiguously as the
relaxed assignment ``X[k]`` (row-major ``N x n``), then the idle-distance
bounds ``d[k]`` (``N``), then the mismatch epigraph variables ``e[k]`` (``n``).

Distances are Manhattan in degrees. ``|a| + |b|`` is encoded as the max of the
four signed sums ``±a ± b``, so each taxi and period contributes four rows.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .lp import LinearProgram, LpSolution, LpStatus, solve

log = logging.getLogger(__name__)

SIGNS = np.array([(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)])
ROW_TOL = 1e-6
BRUTE_FORCE_LIMIT = 10 ** 6


class DispatchInfeasible(RuntimeError):
    """No assignment satisfies the distance caps."""

    def __init__(self, message, taxi=None):
        super().__init__(message)
        self.taxi = taxi


@dataclass
class DispatchInstance:
    """Parameters of one receding-horizon solve.

    Exactly one of ``demand`` (nominal, ``(T, n)``) or the pair
    ``demand_lo``/``demand_hi`` (robust, ``(T, n)`` each, with ``totals`` of shape
    ``(T,)``) must be given. ``mobility`` holds the ``T - 1`` matrices linking
    consecutive periods. ``alpha`` is ``(T, N)`` in degrees, ``beta`` is ``(T,)``.
    """

    positions: np.ndarray
    stations: np.ndarray
    mobility: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    demand: np.ndarray | None = None
    demand_lo: np.ndarray | None = None
    demand_hi: np.ndarray | None = None
    totals: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.stations = np.asarray(self.stations, dtype=float)
        N = self.positions.shape[0]
        if N < 1:
            raise ValueError("a dispatch instance needs at least one vacant taxi")
        if self.stations.ndim != 3 or self.stations.shape[0] != N or self.stations.shape[2] != 2:
            raise ValueError(f"stations must be (N={N}, n, 2), got {self.stations.shape}")
        n = self.stations.shape[1]

        robust = self.demand is None
        if robust:
            if self.demand_lo is None or self.demand_hi is None:
                raise ValueError("give either demand or demand_lo/demand_hi")
            self.demand_lo = np.atleast_2d(np.asarray(self.demand_lo, dtype=float))
            self.demand_hi = np.atleast_2d(np.asarray(self.demand_hi, dtype=float))
            T = self.demand_lo.shape[0]
            if self.demand_lo.shape != (T, n) or self.demand_hi.shape != (T, n):
                raise ValueError(f"demand bounds must be (T, {n})")
            if np.any(self.demand_lo < 0) or np.any(self.demand_lo > self.demand_hi):
                raise ValueError("demand intervals must satisfy 0 <= lo <= hi")
            if self.totals is None:
                self.totals = (self.demand_lo + self.demand_hi).sum(axis=1) / 2
            self.totals = np.asarray(self.totals, dtype=float).reshape(T)
            if np.any(self.totals <= 0):
                raise ValueError("approximate total demand must be positive in every period")
        else:
            if self.demand_lo is not None or self.demand_hi is not None:
                raise ValueError("give either demand or demand_lo/demand_hi, not both")
            self.demand = np.atleast_2d(np.asarray(self.demand, dtype=float))
            T = self.demand.shape[0]
            if self.demand.shape != (T, n):
                raise ValueError(f"demand must be (T, {n})")
            if np.any(self.demand < 0):
                raise ValueError("demand must be nonnegative")
            if np.any(self.demand.sum(axis=1) <= 0):
                raise ValueError("total demand must be positive in every period")

        self.mobility = np.asarray(self.mobility, dtype=float).reshape(-1, n, n)
        if self.mobility.shape[0] != T - 1:
            raise ValueError(f"need {T - 1} mobility matrices, got {self.mobility.shape[0]}")
        if np.any(self.mobility < 0) or np.any(np.abs(self.mobility.sum(axis=2) - 1) > 1e-9):
            raise ValueError("mobility rows must be stochastic")
        self.alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (T, N)).copy()
        if np.any(self.alpha <= 0):
            raise ValueError("distance caps must be positive")
        self.beta = np.broadcast_to(np.asarray(self.beta, dtype=float), (T,)).copy()
        if np.any(self.beta < 0):
            raise ValueError("beta must be nonnegative")

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def n(self) -> int:
        return self.stations.shape[1]

    @property
    def T(self) -> int:
        return self.beta.shape[0]

    @property
    def robust(self) -> bool:
        return self.demand is None

    def targets(self) -> list[list[np.ndarray]]:
        """Per period and region, the distinct demand fractions the mismatch is measured against."""
        out = []
        for k in range(self.T):
            if self.robust:
                lo = self.demand_lo[k] / self.totals[k]
                hi = self.demand_hi[k] / self.totals[k]
                out.append([np.array([a]) if a == b else np.array([a, b]) for a, b in zip(lo, hi)])
            else:
                frac = self.demand[k] / self.demand[k].sum()
                out.append([np.array([f]) for f in frac])
        return out

    def corners(self, k: int) -> np.ndarray:
        """All ``2**n`` extreme demand vectors of period ``k`` (nominal: just one)."""
        if not self.robust:
            return self.demand[k][None, :]
        return np.array(list(itertools.product(*zip(self.demand_lo[k], self.demand_hi[k]))))

    def expected_stations(self, k: int) -> np.ndarray:
        """``(N, n, 2)``: expected end position after period ``k`` for each start region."""
        return np.einsum("jl,ilc->ijc", self.mobility[k], self.stations)


@dataclass
class VarIndex:
    N: int
    n: int
    T: int

    @property
    def per_period(self) -> int:
        return self.N * self.n + self.N + self.n

    @property
    def size(self) -> int:
        return self.T * self.per_period

    def x(self, k, i, j):
        return k * self.per_period + i * self.n + j

    def x_block(self, k) -> slice:
        base = k * self.per_period
        return slice(base, base + self.N * self.n)

    def d(self, k, i):
        return k * self.per_period + self.N * self.n + i

    def d_block(self, k) -> slice:
        base = k * self.per_period + self.N * self.n
        return slice(base, base + self.N)

    def e(self, k, j):
        return k * self.per_period + self.N * self.n + self.N + j


def expected_end_position(x_row, C, W_i) -> np.ndarray:
    """Expected position ``x_row @ C @ W_i`` after one period of mobility."""
    x_row = np.asarray(x_row, dtype=float)
    C = np.asarray(C, dtype=float)
    W_i = np.asarray(W_i, dtype=float)
    n = x_row.shape[-1]
    if C.shape != (n, n) or W_i.shape != (n, 2):
        raise ValueError(f"expected C ({n}, {n}) and W_i ({n}, 2), got {C.shape} and {W_i.shape}")
    return x_row @ C @ W_i


def _box_distance(p, pts) -> float:
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return float(np.sum(np.maximum(lo - p, 0) + np.maximum(p - hi, 0)))


def check_reachability(inst: DispatchInstance):
    """Raise if some taxi cannot reach any convex combination of its stations."""
    for i in range(inst.N):
        gap = _box_distance(inst.positions[i], inst.stations[i])
        if gap > inst.alpha[0, i] + 1e-12:
            raise DispatchInfeasible(
                f"taxi {i} is {gap:.6g} deg from its stations but alpha is {inst.alpha[0, i]:.6g}",
                taxi=i)


def _build(inst: DispatchInstance):
    N, n, T = inst.N, inst.n, inst.T
    vi = VarIndex(N, n, T)
    targets = inst.targets()
    # coordinates relative to each taxi's position; exact because rows of X and C sum to 1
    V = inst.stations - inst.positions[:, None, :]

    n_rows = sum(2 * len(t) for tk in targets for t in tk) + 4 * N * T
    A = np.zeros((n_rows, vi.size))
    b = np.zeros(n_rows)
    row = 0
    for k in range(T):
        for j in range(n):
            cols = [vi.x(k, i, j) for i in range(N)]
            for t in targets[k][j]:
                A[row, cols] = 1.0 / N
                A[row, vi.e(k, j)] = -1.0
                b[row] = t
                A[row + 1, cols] = -1.0 / N
                A[row + 1, vi.e(k, j)] = -1.0
                b[row + 1] = -t
                row += 2
        if k > 0:
            EV = np.einsum("jl,ilc->ijc", inst.mobility[k - 1], V)
        for i in range(N):
            xs = slice(vi.x(k, i, 0), vi.x(k, i, 0) + n)
            xp = slice(vi.x(k - 1, i, 0), vi.x(k - 1, i, 0) + n) if k > 0 else None
            for s in SIGNS:
                # sigma . (start - X_k W) - d <= 0
                A[row, xs] = -(V[i] @ s)
                if xp is not None:
                    A[row, xp] = EV[i] @ s
                A[row, vi.d(k, i)] = -1.0
                row += 1
    assert row == n_rows

    A_eq = np.zeros((N * T, vi.size))
    for k in range(T):
        for i in range(N):
            A_eq[k * N + i, vi.x(k, i, 0):vi.x(k, i, 0) + n] = 1.0
    b_eq = np.ones(N * T)

    c = np.zeros(vi.size)
    lb = np.zeros(vi.size)
    ub = np.full(vi.size, np.inf)
    for k in range(T):
        ub[vi.x_block(k)] = 1.0
        c[vi.d_block(k)] = inst.beta[k]
        ub[vi.d_block(k)] = inst.alpha[k]
        c[vi.e(k, 0):vi.e(k, 0) + n] = 1.0
    return LinearProgram(c, A, b, A_eq, b_eq, lb, ub), vi


def build_nominal_lp(inst: DispatchInstance):
    """LP relaxation of the nominal problem. Returns ``(LinearProgram, VarIndex)``."""
    if inst.robust:
        raise ValueError("instance carries interval demand; use build_robust_lp")
    check_reachability(inst)
    return _build(inst)


def build_robust_lp(inst: DispatchInstance):
    """Epigraph form of the min-max problem over interval demand.

    Each mismatch variable bounds ``|s - lo/R|`` and ``|s - hi/R|``; identical
    endpoints share one pair of rows, so a degenerate interval reproduces the
    nominal LP exactly.
    """
    if not inst.robust:
        raise ValueError("instance carries point demand; use build_nominal_lp")
    check_reachability(inst)
    return _build(inst)


def build_lp(inst: DispatchInstance):
    return build_robust_lp(inst) if inst.robust else build_nominal_lp(inst)


def round_first_step(X1, tie_tol: float = 1e-9) -> np.ndarray:
    """Largest entry of each row becomes 1; near-ties go to the lowest region."""
    X1 = np.asarray(X1, dtype=float)
    top = X1.max(axis=1, keepdims=True)
    pick = np.argmax(X1 >= top - tie_tol, axis=1)
    out = np.zeros_like(X1)
    out[np.arange(X1.shape[0]), pick] = 1.0
    return out


@dataclass
class Objective:
    je: np.ndarray  # mismatch per period
    jd: np.ndarray  # summed idle distance per period (degrees)
    d: np.ndarray  # (T, N) tight distances
    total: float

    @property
    def JE(self) -> float:
        return float(self.je.sum())

    @property
    def JD(self) -> float:
        return float(self.jd.sum())


def mismatch(supply_share, targets) -> float:
    """Sum over regions of the worst ``|share - target|`` across that region's targets."""
    return float(sum(np.max(np.abs(s - t)) for s, t in zip(supply_share, targets)))


def evaluate_objective(X, inst: DispatchInstance) -> Objective:
    """Objective of a given assignment sequence with distances set tight.

    For robust instances the mismatch term is the worst case over the interval.
    """
    X = np.asarray(X, dtype=float).reshape(inst.T, inst.N, inst.n)
    targets = inst.targets()
    je = np.array([mismatch(X[k].sum(axis=0) / inst.N, targets[k]) for k in range(inst.T)])
    d = np.empty((inst.T, inst.N))
    for k in range(inst.T):
        dest = np.einsum("ij,ijc->ic", X[k], inst.stations)
        if k == 0:
            start = inst.positions
        else:
            start = np.einsum("ij,jl,ilc->ic", X[k - 1], inst.mobility[k - 1], inst.stations)
        d[k] = np.abs(start - dest).sum(axis=1)
    jd = d.sum(axis=1)
    return Objective(je, jd, d, float(je.sum() + inst.beta @ jd))


@dataclass
class DispatchPlan:
    X: np.ndarray  # (T, N, n) relaxed (or binary for brute force)
    d: np.ndarray  # (T, N)
    X1: np.ndarray  # rounded first step, (N, n)
    objective: Objective  # evaluated at X
    lp_objective: float | None = None
    lp: LpSolution | None = field(default=None, repr=False)
    alpha_slack: float = 0.0  # worst cap violation of the rounded first step

    @property
    def regions(self) -> np.ndarray:
        """0-based dispatched region of each taxi."""
        return np.argmax(self.X1, axis=1)


def first_step_slack(X1_bin, inst: DispatchInstance) -> float:
    dest = np.einsum("ij,ijc->ic", X1_bin, inst.stations)
    d = np.abs(inst.positions - dest).sum(axis=1)
    return float(max(0.0, np.max(d - inst.alpha[0])))


def solve_dispatch(inst: DispatchInstance, tol: float = 1e-9, max_iters: int = 100_000) -> DispatchPlan:
    """Solve the relaxation (nominal or robust) and round the first step.

    Raises :class:`DispatchInfeasible` when the LP has no solution.
    """
    lp, vi = build_lp(inst)
    sol = solve(lp, tol=tol, max_iters=max_iters)
    if sol.status is LpStatus.INFEASIBLE:
        raise DispatchInfeasible("dispatch LP is infeasible")
    if sol.status is not LpStatus.OPTIMAL:
        raise RuntimeError(f"dispatch LP ended with status {sol.status.value}")
    X = np.stack([sol.x[vi.x_block(k)].reshape(inst.N, inst.n) for k in range(inst.T)])
    d = np.stack([sol.x[vi.d_block(k)] for k in range(inst.T)])
    X1 = round_first_step(X[0])
    slack = first_step_slack(X1, inst)
    if slack > 0:
        log.info("rounded dispatch exceeds the distance cap by %.3g deg", slack)
    return DispatchPlan(X, d, X1, evaluate_objective(X, inst), sol.objective, sol, slack)


def brute_force_dispatch(inst: DispatchInstance, limit: int = BRUTE_FORCE_LIMIT,
                         tol: float = 1e-9) -> DispatchPlan:
    """Exhaustive search over binary assignments honouring the distance caps.

    Robust instances are scored by enumerating every corner of the demand box
    and taking the worst one, independently of the LP reformulation.
    """
    N, n, T = inst.N, inst.n, inst.T
    M = n ** (N * T)
    if M > limit:
        raise ValueError(f"brute force would enumerate {M} assignments (limit {limit})")
    codes = np.arange(M)
    digits = np.empty((M, T * N), dtype=np.int64)
    for p in range(T * N - 1, -1, -1):
        codes, digits[:, p] = np.divmod(codes, n)
    A = digits.reshape(M, T, N)

    cost = np.zeros(M)
    feasible = np.ones(M, dtype=bool)
    d_all = np.empty((M, T, N))
    taxi = np.arange(N)
    for k in range(T):
        counts = np.zeros((M, n))
        for j in range(n):
            counts[:, j] = (A[:, k] == j).sum(axis=1)
        share = counts / N
        worst = None
        for corner in inst.corners(k):
            total = inst.totals[k] if inst.robust else corner.sum()
            val = np.abs(share - corner / total).sum(axis=1)
            worst = val if worst is None else np.maximum(worst, val)
        cost += worst

        dest = inst.stations[taxi, A[:, k]]  # (M, N, 2)
        if k == 0:
            start = inst.positions[None, :, :]
        else:
            start = inst.expected_stations(k - 1)[taxi, A[:, k - 1]]
        d = np.abs(start - dest).sum(axis=2)
        d_all[:, k] = d
        feasible &= np.all(d <= inst.alpha[k] + tol, axis=1)
        cost += inst.beta[k] * d.sum(axis=1)

    if not feasible.any():
        raise DispatchInfeasible("no binary assignment satisfies the distance caps")
    cost = np.where(feasible, cost, np.inf)
    best = int(np.argmin(cost))
    X = np.zeros((T, N, n))
    for k in range(T):
        X[k, taxi, A[best, k]] = 1.0
    obj = evaluate_objective(X, inst)
    return DispatchPlan(X, d_all[best], X[0].copy(), obj, None, None, 0.0)
