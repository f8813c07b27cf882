"""Two-phase bounded-variable simplex with a dense basis inverse.

The dispatch problems are small enough (a few thousand columns at most) that a
dense explicit inverse is both fast and reproducible: every solve of the same
:class:`LinearProgram` walks the same pivot sequence and returns the same
vertex, bit for bit.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import sparse

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
DEGEN_TOL = 1e-12
PIVOT_TOL = 1e-9
# consecutive degenerate pivots tolerated under Dantzig pricing before Bland
STALL_LIMIT = 50
REFACTOR_EVERY = 200


class LpStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"


def _as_2d(a, ncols):
    if a is None:
        return np.zeros((0, ncols))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and a.size == 0:
        return a.reshape(0, ncols)
    return np.atleast_2d(a)


@dataclass
class LinearProgram:
    """``min c @ x`` s.t. ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq``, ``lb <= x <= ub``.

    Missing blocks may be passed as ``None``. Bounds default to ``[0, inf)``.
    """

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        v = self.c.size
        self.A_ub = _as_2d(self.A_ub, v)
        self.A_eq = _as_2d(self.A_eq, v)
        self.b_ub = np.zeros(0) if self.b_ub is None else np.asarray(self.b_ub, dtype=float).ravel()
        self.b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).ravel()
        self.lb = np.zeros(v) if self.lb is None else np.asarray(self.lb, dtype=float).ravel().copy()
        self.ub = np.full(v, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel().copy()

        if self.A_ub.shape[1] != v or self.A_eq.shape[1] != v:
            raise ValueError(f"constraint matrices must have {v} columns, "
                             f"got A_ub {self.A_ub.shape}, A_eq {self.A_eq.shape}")
        if self.A_ub.shape[0] != self.b_ub.size:
            raise ValueError(f"A_ub has {self.A_ub.shape[0]} rows but b_ub has {self.b_ub.size}")
        if self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError(f"A_eq has {self.A_eq.shape[0]} rows but b_eq has {self.b_eq.size}")
        if self.lb.size != v or self.ub.size != v:
            raise ValueError("bounds must match the number of variables")
        if np.any(self.lb > self.ub):
            bad = int(np.argmax(self.lb > self.ub))
            raise ValueError(f"lower bound exceeds upper bound for variable {bad}")
        if np.any(np.isnan(self.lb)) or np.any(np.isnan(self.ub)):
            raise ValueError("bounds must not be NaN")
        for name in ("c", "A_ub", "b_ub", "A_eq", "b_eq"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise ValueError("a variable cannot be fixed at infinity")

    @property
    def num_vars(self) -> int:
        return self.c.size

    def dump(self, stream=None) -> str:
        """Plain-text dump for cross-checking with an external solver.

        Layout: a header line ``LP <nvars> <n_ub> <n_eq>``, then sections
        ``C``, ``UB`` (each row: coefficients then rhs), ``EQ`` (same) and
        ``BOUNDS`` (one ``lb ub`` line per variable). Numbers use ``repr``.
        """
        out = io.StringIO()
        fmt = lambda row: " ".join(repr(float(x)) for x in row)
        out.write(f"LP {self.num_vars} {self.b_ub.size} {self.b_eq.size}\n")
        out.write("C\n" + fmt(self.c) + "\n")
        out.write("UB\n")
        for a, b in zip(self.A_ub, self.b_ub):
            out.write(fmt(a) + " " + repr(float(b)) + "\n")
        out.write("EQ\n")
        for a, b in zip(self.A_eq, self.b_eq):
            out.write(fmt(a) + " " + repr(float(b)) + "\n")
        out.write("BOUNDS\n")
        for lo, hi in zip(self.lb, self.ub):
            out.write(f"{float(lo)!r} {float(hi)!r}\n")
        text = out.getvalue()
        if stream is not None:
            stream.write(text)
        return text


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray
    objective: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


@dataclass
class ResidualReport:
    max_eq_residual: float
    max_ub_violation: float
    max_bound_violation: float

    def passes(self, tol: float) -> bool:
        return max(self.max_eq_residual, self.max_ub_violation, self.max_bound_violation) <= tol


def check_solution(lp: LinearProgram, x, tol: float = FEAS_TOL) -> ResidualReport:
    """Feasibility residuals of ``x`` (an array or an :class:`LpSolution`)."""
    if isinstance(x, LpSolution):
        x = x.x
    x = np.asarray(x, dtype=float)
    if x.size != lp.num_vars:
        raise ValueError(f"solution has {x.size} entries, LP has {lp.num_vars} variables")
    eq = float(np.max(np.abs(lp.A_eq @ x - lp.b_eq))) if lp.b_eq.size else 0.0
    ub = float(np.max(np.maximum(lp.A_ub @ x - lp.b_ub, 0.0))) if lp.b_ub.size else 0.0
    bnd = float(np.max(np.maximum(np.maximum(lp.lb - x, x - lp.ub), 0.0))) if x.size else 0.0
    return ResidualReport(eq, ub, bnd)


@dataclass
class _Columns:
    """Map from original variables to nonnegative shifted columns."""

    orig: list = field(default_factory=list)  # original index of each column
    sign: list = field(default_factory=list)  # x_orig contribution sign
    offset: np.ndarray | None = None  # constant part of each original variable


def _standardize(lp: LinearProgram):
    v = lp.num_vars
    cols = _Columns(offset=np.zeros(v))
    upper = []
    for j in range(v):
        lo, hi = lp.lb[j], lp.ub[j]
        if np.isfinite(lo):
            cols.orig.append(j); cols.sign.append(1.0)
            cols.offset[j] = lo
            upper.append(hi - lo)
        elif np.isfinite(hi):
            cols.orig.append(j); cols.sign.append(-1.0)
            cols.offset[j] = hi
            upper.append(np.inf)
        else:
            cols.orig.append(j); cols.sign.append(1.0)
            cols.orig.append(j); cols.sign.append(-1.0)
            upper.extend([np.inf, np.inf])
    orig = np.array(cols.orig, dtype=int)
    sign = np.array(cols.sign)
    A = np.vstack([lp.A_ub, lp.A_eq]) if (lp.b_ub.size + lp.b_eq.size) else np.zeros((0, v))
    b = np.concatenate([lp.b_ub, lp.b_eq]) - A @ cols.offset
    A_struct = A[:, orig] * sign
    c_struct = lp.c[orig] * sign
    return A_struct, b, c_struct, np.array(upper, dtype=float), orig, sign, cols.offset


class _Revised:
    """Revised simplex state: explicit dense basis inverse, sparse columns."""

    def __init__(self, A, b, upper, basis, max_iters):
        self.A = sparse.csc_matrix(A)
        self.AT = sparse.csr_matrix(self.A.T)
        self.b = b
        self.m, self.n = A.shape
        self.upper = upper
        self.basis = basis
        self.at_upper = np.zeros(self.n, dtype=bool)
        self.Binv = np.eye(self.m)
        self.xb = b.copy()
        self.iterations = 0
        self.max_iters = max_iters
        self._since_refactor = 0

    def nonbasic_values(self):
        vals = np.where(self.at_upper, self.upper, 0.0)
        vals[self.basis] = 0.0
        return vals

    def column(self, j):
        lo, hi = self.A.indptr[j], self.A.indptr[j + 1]
        return self.Binv[:, self.A.indices[lo:hi]] @ self.A.data[lo:hi]

    def row(self, r):
        """Row ``r`` of the current tableau ``B^-1 A``."""
        return self.AT @ self.Binv[r]

    def reduced_costs(self, cost):
        y = cost[self.basis] @ self.Binv
        return cost - self.AT @ y

    def refactor(self):
        if self.m:
            B = self.A[:, self.basis].toarray()
            try:
                self.Binv = np.linalg.inv(B)
            except np.linalg.LinAlgError:
                log.warning("basis matrix singular during refactorization; keeping updated inverse")
                return
            self.xb = self.Binv @ (self.b - self.A @ self.nonbasic_values())
        self._since_refactor = 0

    def pivot(self, r, j, col):
        prow = self.Binv[r] / col[r]
        col = col.copy()
        col[r] = 0.0
        nz = np.flatnonzero(col)
        if nz.size:
            self.Binv[nz] -= np.outer(col[nz], prow)
        self.Binv[r] = prow
        self.basis[r] = j
        self._since_refactor += 1

    def drop_row(self, r):
        keep = np.arange(self.m) != r
        self.A = sparse.csc_matrix(self.A[keep])
        self.AT = sparse.csr_matrix(self.A.T)
        self.b = self.b[keep]
        self.basis = self.basis[keep]
        self.m -= 1
        self.refactor()

    def run(self, cost, eligible):
        """Primal simplex from the current basis. Returns an LpStatus."""
        basic = np.zeros(self.n, dtype=bool)
        basic[self.basis] = True
        dj = self.reduced_costs(cost)
        bland = False
        stall = 0
        ub_basis = self.upper[self.basis]
        while True:
            if self.iterations >= self.max_iters:
                return LpStatus.ITERATION_LIMIT
            cand = eligible & ~basic & (
                (~self.at_upper & (dj < -OPT_TOL)) | (self.at_upper & (dj > OPT_TOL)))
            if not cand.any():
                return LpStatus.OPTIMAL
            if bland:
                j = int(np.argmax(cand))
            else:
                j = int(np.argmax(np.where(cand, np.abs(dj), -1.0)))
            s = -1.0 if self.at_upper[j] else 1.0
            col = self.column(j)
            alpha = s * col

            t_row = np.inf
            r = -1
            if self.m:
                dec = alpha > PIVOT_TOL
                inc = (alpha < -PIVOT_TOL) & np.isfinite(ub_basis)
                ratios = np.full(self.m, np.inf)
                ratios[dec] = np.maximum(self.xb[dec], 0.0) / alpha[dec]
                ratios[inc] = np.maximum(ub_basis[inc] - self.xb[inc], 0.0) / (-alpha[inc])
                t_row = float(ratios.min())
                if np.isfinite(t_row):
                    ties = np.flatnonzero(ratios <= t_row + DEGEN_TOL)
                    r = int(ties[np.argmin(self.basis[ties])])
            t_flip = self.upper[j]

            self.iterations += 1
            if t_flip <= t_row:
                if not np.isfinite(t_flip):
                    return LpStatus.UNBOUNDED
                self.xb -= t_flip * alpha
                self.at_upper[j] = not self.at_upper[j]
                stall, bland = 0, False
                continue

            t = t_row
            entering_value = t if s > 0 else self.upper[j] - t
            self.xb -= t * alpha
            leaving = self.basis[r]
            leaves_upper = alpha[r] < 0
            self.xb[r] = entering_value
            rowr = self.row(r) / col[r]
            self.pivot(r, j, col)
            basic[leaving] = False
            basic[j] = True
            self.at_upper[leaving] = leaves_upper
            self.at_upper[j] = False
            ub_basis = self.upper[self.basis]
            dj = dj - dj[j] * rowr
            dj[j] = 0.0

            if t <= DEGEN_TOL:
                stall += 1
                if stall >= STALL_LIMIT:
                    bland = True
            else:
                stall, bland = 0, False

            if self._since_refactor >= REFACTOR_EVERY:
                self.refactor()
                dj = self.reduced_costs(cost)


def solve(lp: LinearProgram, tol: float = FEAS_TOL, max_iters: int = 100_000) -> LpSolution:
    """Solve ``lp`` with a two-phase bounded-variable primal simplex.

    Pricing is Dantzig's rule (largest reduced cost, lowest index on ties);
    after a run of degenerate pivots the solver switches to Bland's rule until
    the objective moves again, which rules out cycling.
    """
    A, b, c, upper, orig, sign, offset = _standardize(lp)
    n_struct = A.shape[1]
    n_ub = lp.b_ub.size
    m = A.shape[0]

    # slacks for the inequality rows
    S = np.zeros((m, n_ub))
    S[np.arange(n_ub), np.arange(n_ub)] = 1.0
    A = np.hstack([A, S])
    c = np.concatenate([c, np.zeros(n_ub)])
    upper = np.concatenate([upper, np.full(n_ub, np.inf)])

    flip = b < 0
    A[flip] *= -1.0
    b = np.where(flip, -b, b)

    basis = np.empty(m, dtype=int)
    needs_art = []
    for i in range(m):
        if i < n_ub and not flip[i]:
            basis[i] = n_struct + i
        else:
            needs_art.append(i)
    n_art = len(needs_art)
    n_real = A.shape[1]
    if n_art:
        Art = np.zeros((m, n_art))
        Art[needs_art, np.arange(n_art)] = 1.0
        A = np.hstack([A, Art])
        upper = np.concatenate([upper, np.full(n_art, np.inf)])
        basis[needs_art] = n_real + np.arange(n_art)
    total = A.shape[1]

    tb = _Revised(A, b, upper, basis, max_iters)
    real = np.zeros(total, dtype=bool)
    real[:n_real] = True

    if n_art:
        cost1 = np.zeros(total)
        cost1[n_real:] = 1.0
        status = tb.run(cost1, np.ones(total, dtype=bool))
        if status is LpStatus.ITERATION_LIMIT:
            return _result(lp, tb, status, n_struct, orig, sign, offset)
        tb.refactor()
        infeas = float(np.sum(np.where(tb.basis >= n_real, tb.xb, 0.0)))
        if infeas > tol * max(1.0, float(np.max(b, initial=0.0))):
            return _result(lp, tb, LpStatus.INFEASIBLE, n_struct, orig, sign, offset)
        _drive_out_artificials(tb, n_real)
        tb.upper = tb.upper.copy()
        tb.upper[n_real:] = 0.0

    status = tb.run(np.concatenate([c, np.zeros(total - n_real)]), real)
    if status is LpStatus.OPTIMAL:
        tb.refactor()
    return _result(lp, tb, status, n_struct, orig, sign, offset)


def _drive_out_artificials(tb: _Revised, n_real: int):
    r = 0
    while r < tb.m:
        if tb.basis[r] < n_real:
            r += 1
            continue
        basic = np.zeros(tb.n, dtype=bool)
        basic[tb.basis] = True
        row = np.abs(tb.row(r)[:n_real])
        row[basic[:n_real]] = 0.0
        j = int(np.argmax(row))
        if row[j] > PIVOT_TOL:
            entering_value = tb.upper[j] if tb.at_upper[j] else 0.0
            tb.pivot(r, j, tb.column(j))
            tb.xb[r] = entering_value
            tb.at_upper[j] = False
            r += 1
        else:
            tb.drop_row(r)


def _result(lp, tb, status, n_struct, orig, sign, offset):
    vals = tb.nonbasic_values()
    vals[tb.basis] = tb.xb
    y = vals[:n_struct]
    if status is LpStatus.OPTIMAL:
        y = np.clip(y, 0.0, tb.upper[:n_struct])
    x = offset.copy()
    np.add.at(x, orig, sign * y)
    if status is LpStatus.OPTIMAL:
        x = np.clip(x, lp.lb, lp.ub)
        obj = float(lp.c @ x)
    else:
        obj = float("nan")
    return LpSolution(status=status, x=x, objective=obj, iterations=tb.iterations)
