"""Receding-horizon dispatch loop.

One call to :func:`rhc_step` is one ``t2`` period: refresh the demand
bookkeeping (at the start of each ``t1`` slot), schedule per-period demand over
the horizon, solve the dispatch LP and turn the rounded first step into
orders. Slot indices ``h1``/``h2`` and horizon steps ``k`` are 1-based.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .demand import DemandModel, dropoff_probability
from .dispatch import DispatchInfeasible, DispatchInstance, DispatchPlan, solve_dispatch
from .geo import RegionGrid, StationTable
from .trace import MINUTES_PER_DAY

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RhcConfig:
    t1: int = 60
    t2: int = 60
    horizon: int = 2
    beta: float | tuple = 1.0
    alpha: float | tuple = 0.1
    mode: str = "nominal"
    lp_tol: float = 1e-9
    max_iters: int = 100_000

    def __post_init__(self):
        if self.t1 <= 0 or self.t2 <= 0:
            raise ValueError("slot lengths must be positive")
        if MINUTES_PER_DAY % self.t1:
            raise ValueError(f"t1={self.t1} must divide {MINUTES_PER_DAY}")
        if self.t1 % self.t2:
            raise ValueError(f"t2={self.t2} must divide t1={self.t1}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.mode not in ("nominal", "robust"):
            raise ValueError(f"mode must be nominal or robust, got {self.mode!r}")
        for name in ("beta", "alpha"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if v.size not in (1, self.horizon):
                raise ValueError(f"{name} needs 1 or {self.horizon} values")
        if np.any(np.asarray(self.beta, dtype=float) < 0):
            raise ValueError("beta must be nonnegative")
        if np.any(np.asarray(self.alpha, dtype=float) <= 0):
            raise ValueError("alpha must be positive")

    @property
    def H(self) -> int:
        return self.t1 // self.t2

    @property
    def slots_per_day(self) -> int:
        return MINUTES_PER_DAY // self.t2

    def betas(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.beta, dtype=float), (self.horizon,)).copy()

    def alphas(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.alpha, dtype=float), (self.horizon,)).copy()


@dataclass
class FleetSnapshot:
    vacant_ids: tuple
    vacant_positions: np.ndarray  # (N, 2)
    occupied_count: int = 0

    def __post_init__(self):
        self.vacant_ids = tuple(self.vacant_ids)
        self.vacant_positions = np.asarray(self.vacant_positions, dtype=float).reshape(-1, 2)
        if len(self.vacant_ids) != self.vacant_positions.shape[0]:
            raise ValueError("one position per vacant taxi is required")

    @property
    def N(self) -> int:
        return len(self.vacant_ids)


@dataclass
class RhcState:
    h2: int = 1
    r: np.ndarray | None = None
    r_o: np.ndarray | None = None
    step: int = 0
    last_status: str = ""
    last_plan: DispatchPlan | None = field(default=None, repr=False)

    def h1(self, cfg: RhcConfig) -> int:
        return (self.h2 - 1) * cfg.t2 // cfg.t1 + 1

    def at_slot_start(self, cfg: RhcConfig) -> bool:
        return ((self.h2 - 1) * cfg.t2) % cfg.t1 == 0


@dataclass(frozen=True)
class Order:
    step: int
    taxi_id: object
    from_region: int
    to_region: int
    target_lat: float
    target_lon: float


def occupied_service_capability(pd, n_o: int) -> np.ndarray:
    """``ceil(pd_j * n_o)`` per region; products within 1e-9 of an integer are not bumped."""
    pd = np.asarray(pd, dtype=float)
    return np.ceil(pd * n_o - 1e-9).clip(min=0).astype(np.int64)


def deduct_demand(r_hat, r_o) -> np.ndarray:
    return np.maximum(np.asarray(r_hat, dtype=float) - np.asarray(r_o, dtype=float), 0.0)


def _future_slot(k, h2, cfg: RhcConfig, num_slots: int):
    """(in_current_slot, 1-based slot index wrapped to the day) for horizon step k."""
    minute_end = (k + h2 - 1) * cfg.t2
    return minute_end, (math.ceil(minute_end / cfg.t1) - 1) % num_slots + 1


def schedule_demand(k: int, h1: int, h2: int, r, model: DemandModel, cfg: RhcConfig) -> np.ndarray:
    """Demand for horizon step ``k``: a 1/H share of the residual ``r`` while
    inside the current slot, else of the model estimate for the later slot."""
    minute_end, slot = _future_slot(k, h2, cfg, model.r_mean.shape[0])
    if minute_end <= h1 * cfg.t1:
        return np.asarray(r, dtype=float) / cfg.H
    return model.r_mean[slot - 1] / cfg.H


def schedule_demand_interval(k: int, h1: int, h2: int, r_o, model: DemandModel, cfg: RhcConfig):
    """Interval analogue of :func:`schedule_demand`; returns ``(lo, hi)``.

    The approximate total used by the robust LP is the midpoint
    ``(lo + hi).sum() / 2`` (computed by :class:`DispatchInstance`).
    """
    minute_end, slot = _future_slot(k, h2, cfg, model.r_mean.shape[0])
    if minute_end <= h1 * cfg.t1:
        r_o = np.asarray(r_o, dtype=float)
        lo = np.maximum(model.r_lo[h1 - 1] - r_o, 0.0)
        hi = np.maximum(model.r_hi[h1 - 1] - r_o, 0.0)
    else:
        lo, hi = model.r_lo[slot - 1], model.r_hi[slot - 1]
    return lo / cfg.H, hi / cfg.H


def refresh_demand(state: RhcState, model: DemandModel, cfg: RhcConfig, occupied_count: int):
    """Reset the slot's residual demand after crediting occupied taxis (in place)."""
    h1 = state.h1(cfg)
    pd = dropoff_probability(model.dp_mean[h1 - 1])
    state.r_o = occupied_service_capability(pd, occupied_count)
    state.r = deduct_demand(model.r_mean[h1 - 1], state.r_o)
    return state


def _stay_orders(state, fleet, regions, stations):
    W = stations.for_taxis(fleet.vacant_ids)
    return [Order(state.step, tid, int(reg) + 1, int(reg) + 1, float(W[i, reg, 0]), float(W[i, reg, 1]))
            for i, (tid, reg) in enumerate(zip(fleet.vacant_ids, regions))]


def build_instance(state: RhcState, fleet: FleetSnapshot, model: DemandModel, cfg: RhcConfig,
                   stations: StationTable, current_regions) -> DispatchInstance | None:
    """Dispatch instance for the current step, or ``None`` when no period has demand.

    A period whose scheduled demand totals zero gives no fairness signal; its
    target becomes the current vacant distribution so the solver has no reason
    to move taxis for it.
    """
    n = model.n
    h1 = state.h1(cfg)
    status_quo = np.bincount(current_regions, minlength=n).astype(float)
    lo, hi = [], []
    for k in range(1, cfg.horizon + 1):
        if cfg.mode == "robust":
            a, b = schedule_demand_interval(k, h1, state.h2, state.r_o, model, cfg)
        else:
            a = b = schedule_demand(k, h1, state.h2, state.r, model, cfg)
        lo.append(a)
        hi.append(b)
    lo, hi = np.array(lo), np.array(hi)
    empty = (lo + hi).sum(axis=1) <= 0
    if empty.all():
        return None
    lo[empty] = status_quo
    hi[empty] = status_quo

    mobility = np.array([model.mobility_at_minute((state.h2 + k - 2) * cfg.t2)
                         for k in range(1, cfg.horizon)]).reshape(-1, n, n)
    alpha = np.repeat(cfg.alphas()[:, None], fleet.N, axis=1)
    common = dict(positions=fleet.vacant_positions, stations=stations.for_taxis(fleet.vacant_ids),
                  mobility=mobility, alpha=alpha, beta=cfg.betas())
    if cfg.mode == "robust":
        return DispatchInstance(demand_lo=lo, demand_hi=hi, **common)
    return DispatchInstance(demand=lo, **common)


def rhc_step(state: RhcState, fleet: FleetSnapshot, model: DemandModel, cfg: RhcConfig,
             stations: StationTable, grid: RegionGrid):
    """Run one dispatch period. Returns ``(orders, new_state)``.

    Solver failures never stop the loop: every vacant taxi is told to stay in
    its current region and the failure is logged.
    """
    if model.t1 != cfg.t1:
        raise ValueError(f"model slot length {model.t1} differs from configured t1={cfg.t1}")
    if model.n != grid.n or stations.num_regions != grid.n:
        raise ValueError("model, stations and grid disagree on the number of regions")
    state = replace(state)
    if state.r is None or state.at_slot_start(cfg):
        refresh_demand(state, model, cfg, fleet.occupied_count)

    orders: list[Order] = []
    state.last_plan = None
    if fleet.N == 0:
        state.last_status = "no-vacant"
    else:
        regions = grid.locate(fleet.vacant_positions[:, 0], fleet.vacant_positions[:, 1])
        inst = build_instance(state, fleet, model, cfg, stations, regions)
        plan = None
        if inst is None:
            state.last_status = "no-demand"
        else:
            try:
                plan = solve_dispatch(inst, tol=cfg.lp_tol, max_iters=cfg.max_iters)
                state.last_status = "optimal"
            except (DispatchInfeasible, RuntimeError) as e:
                log.warning("step %d (h2=%d): %s; keeping taxis in place", state.step, state.h2, e)
                state.last_status = "infeasible"
        if plan is None:
            orders = _stay_orders(state, fleet, regions, stations)
        else:
            state.last_plan = plan
            W = inst.stations
            for i, (tid, reg) in enumerate(zip(fleet.vacant_ids, plan.regions)):
                orders.append(Order(state.step, tid, int(regions[i]) + 1, int(reg) + 1,
                                    float(W[i, reg, 0]), float(W[i, reg, 1])))
        sent = np.bincount([o.to_region - 1 for o in orders], minlength=model.n)
        state.r = np.maximum(state.r - sent, 0.0)

    state.h2 = state.h2 % cfg.slots_per_day + 1
    state.step += 1
    return orders, state
