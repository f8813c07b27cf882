"""Fleet simulation driven by RHC orders, plus the no-dispatch baselines.

Time advances in ``t2`` ticks. Inside a tick movement is instantaneous but every
leg's mileage is booked: order legs and approach legs count as idle, passenger
legs as occupied. A taxi ordered to the region it is already in does not move.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .demand import DemandModel, build_demand_model
from .geo import DEG_TO_MILES, RegionGrid, StationTable, generate_stations
from .rhc import FleetSnapshot, Order, RhcConfig, RhcState, rhc_step
from .seeding import derive_seed
from .trace import MINUTES_PER_DAY, SECONDS_PER_DAY, detect_events

VACANT_IDLE, VACANT_EN_ROUTE, OCCUPIED = 0, 1, 2


@dataclass(frozen=True)
class Request:
    id: int
    time: float  # minutes since scenario start
    origin: tuple
    origin_region: int  # 0-based
    dest: tuple
    dest_region: int


@dataclass
class SimScenario:
    """A synthetic day profile repeated for ``days`` days.

    ``rates[s, j]`` is the expected number of requests in slot ``s`` (of
    ``slot_minutes``) in region ``j``; ``destinations[s, j]`` is the trip
    destination distribution of those requests.
    """

    grid: RegionGrid
    fleet_size: int
    slot_minutes: int
    rates: np.ndarray
    destinations: np.ndarray
    seed: int
    days: int = 1
    requests: list = field(default_factory=list)
    initial_positions: np.ndarray | None = None

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        self.destinations = np.asarray(self.destinations, dtype=float)
        S, n = self.rates.shape
        if n != self.grid.n:
            raise ValueError(f"rates cover {n} regions but the grid has {self.grid.n}")
        if S * self.slot_minutes != MINUTES_PER_DAY:
            raise ValueError("rates must cover exactly one day")
        if np.any(self.rates < 0):
            raise ValueError("request rates must be nonnegative")
        if self.destinations.shape != (S, n, n):
            raise ValueError(f"destinations must have shape {(S, n, n)}")
        if np.any(self.destinations < 0) or np.any(np.abs(self.destinations.sum(axis=2) - 1) > 1e-9):
            raise ValueError("destination matrices must be row-stochastic")
        if self.fleet_size < 1:
            raise ValueError("fleet must have at least one taxi")

    @property
    def horizon_minutes(self) -> int:
        return self.days * MINUTES_PER_DAY

    def slot_of_minute(self, minute: float) -> int:
        return int(minute % MINUTES_PER_DAY) // self.slot_minutes


def uniform_destinations(S: int, n: int) -> np.ndarray:
    return np.full((S, n, n), 1.0 / n)


def skewed_rates(n: int, per_slot: float, hotspots, share: float, slots: int = 24) -> np.ndarray:
    """Constant rates with ``share`` of the demand split evenly over ``hotspots`` (0-based)."""
    hotspots = sorted(set(hotspots))
    if not hotspots or len(hotspots) == n:
        return np.full((slots, n), per_slot / n)
    rates = np.full(n, per_slot * (1 - share) / (n - len(hotspots)))
    rates[hotspots] = per_slot * share / len(hotspots)
    return np.tile(rates, (slots, 1))


def _sample_requests(grid, rates, destinations, slot_minutes, days, rng):
    S, n = rates.shape
    out = []
    for day in range(days):
        for s in range(S):
            counts = rng.poisson(rates[s])
            for j in range(n):
                c = int(counts[j])
                if c == 0:
                    continue
                times = day * MINUTES_PER_DAY + (s + rng.random(c)) * slot_minutes
                origins = grid.sample_points(j + 1, c, rng)
                dests = rng.choice(n, size=c, p=destinations[s, j])
                for t, o, dj in zip(times, origins, dests):
                    dp = grid.sample_points(int(dj) + 1, 1, rng)[0]
                    out.append((float(t), (float(o[0]), float(o[1])), j, (float(dp[0]), float(dp[1])), int(dj)))
    out.sort(key=lambda r: r[0])
    return [Request(i, *r) for i, r in enumerate(out)]


def synthesize_scenario(grid: RegionGrid, fleet_size: int, rates, destinations=None,
                        slot_minutes: int = 60, seed: int = 0, days: int = 1) -> SimScenario:
    """Poisson request arrivals per slot and region; fleet parked uniformly at random."""
    rates = np.asarray(rates, dtype=float)
    if destinations is None:
        destinations = uniform_destinations(*rates.shape)
    sc = SimScenario(grid, fleet_size, slot_minutes, rates, destinations, seed, days)
    rng = np.random.default_rng(derive_seed(seed, "requests"))
    sc.requests = _sample_requests(grid, sc.rates, sc.destinations, slot_minutes, days, rng)
    rng = np.random.default_rng(derive_seed(seed, "fleet"))
    sc.initial_positions = np.column_stack([
        rng.uniform(grid.min_lat, grid.max_lat, fleet_size),
        rng.uniform(grid.min_lon, grid.max_lon, fleet_size)])
    return sc


def model_from_scenario(sc: SimScenario, t1: int, t2: int, history_days: int = 18, B: int = 200,
                        seed: int = 0, multiplier: float = 1.0, trip_minutes: float | None = None
                        ) -> DemandModel:
    """Estimate a demand model from ``history_days`` fresh days of the same profile.

    The history is independent of the scenario's own requests, mimicking a
    model learned from past traces and applied to a new day.
    """
    trip_minutes = t2 if trip_minutes is None else trip_minutes
    rng = np.random.default_rng(derive_seed(seed, "history"))
    hist = _sample_requests(sc.grid, sc.rates, sc.destinations, sc.slot_minutes, history_days, rng)
    n = sc.grid.n
    S1, S2 = MINUTES_PER_DAY // t1, MINUTES_PER_DAY // t2
    P = np.zeros((history_days, S1, n))
    D = np.zeros((history_days, S1, n))
    T = np.zeros((history_days, S2, n, n))
    for req in hist:
        day, minute = divmod(req.time, MINUTES_PER_DAY)
        day = int(day)
        P[day, int(minute // t1), req.origin_region] += 1
        T[day, int(minute // t2), req.origin_region, req.dest_region] += 1
        dday, dmin = divmod(req.time + trip_minutes, MINUTES_PER_DAY)
        if int(dday) < history_days:
            D[int(dday), int(dmin // t1), req.dest_region] += 1
    return build_demand_model(P, D, T, t1, t2, B, derive_seed(seed, "bootstrap"), multiplier,
                              {"source": "synthetic", "history_days": history_days})


@dataclass
class SimMetrics:
    t2: int
    mismatch: np.ndarray  # (K,)
    idle_miles: np.ndarray  # (K,)
    supply_share: np.ndarray  # (K, n)
    demand_share: np.ndarray  # (K, n)
    ratios: np.ndarray  # (K, n) vacant taxis per expected request, nan where no demand
    state_counts: np.ndarray | None = None  # (K, 3)
    taxi_idle: np.ndarray | None = None
    taxi_occupied: np.ndarray | None = None
    taxi_total: np.ndarray | None = None
    served: int = 0
    expired: int = 0
    fleet_size: int = 0

    @property
    def num_slots(self) -> int:
        return self.mismatch.size

    @property
    def total_idle(self) -> float:
        return math.fsum(self.idle_miles)

    @property
    def mean_mismatch(self) -> float:
        return float(np.mean(self.mismatch)) if self.mismatch.size else 0.0

    def hourly_idle(self) -> np.ndarray:
        """Idle miles per hour of the run (ticks grouped by their start minute)."""
        hours = (np.arange(self.num_slots) * self.t2) // 60
        return np.bincount(hours, weights=self.idle_miles, minlength=int(hours.max(initial=-1)) + 1)

    def idle_per_taxi_hour(self) -> float:
        hours = self.num_slots * self.t2 / 60
        return self.total_idle / (max(self.fleet_size, 1) * hours) if hours else 0.0

    def summary(self) -> dict:
        return {
            "slots": self.num_slots,
            "t2": self.t2,
            "fleet_size": self.fleet_size,
            "mean_mismatch_error": self.mean_mismatch,
            "total_idle_miles": self.total_idle,
            "idle_miles_per_taxi_hour": self.idle_per_taxi_hour(),
            "served": self.served,
            "expired": self.expired,
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "mismatch_error", "idle_miles"])
            for k in range(self.num_slots):
                w.writerow([k + 1, repr(float(self.mismatch[k])), repr(float(self.idle_miles[k]))])

    def write_summary(self, path, **extra):
        rec = dict(extra)
        rec.update(self.summary())
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(rec))
            w.writerow([repr(v) if isinstance(v, float) else v for v in rec.values()])


def supply_demand_error(supply_counts, demand) -> float:
    """``|| supply/N - demand/R ||_1``; zero when either side is empty."""
    supply_counts = np.asarray(supply_counts, dtype=float)
    demand = np.asarray(demand, dtype=float)
    N, R = supply_counts.sum(), demand.sum()
    if N <= 0 or R <= 0:
        return 0.0
    return float(np.abs(supply_counts / N - demand / R).sum())


@dataclass
class SimResult:
    metrics: SimMetrics
    orders: list

    def write_orders(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "taxi_id", "from_region", "to_region", "target_lat", "target_lon"])
            for o in self.orders:
                w.writerow([o.step, o.taxi_id, o.from_region, o.to_region,
                            repr(o.target_lat), repr(o.target_lon)])


def _manhattan(a, b) -> float:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _simulate(sc: SimScenario, t2: int, dispatcher=None, trip_ticks: int = 1,
              miles_per_degree: float = DEG_TO_MILES) -> SimResult:
    if t2 <= 0 or MINUTES_PER_DAY % t2:
        raise ValueError(f"t2={t2} must divide {MINUTES_PER_DAY}")
    grid, F, n = sc.grid, sc.fleet_size, sc.grid.n
    K = sc.horizon_minutes // t2
    pos = [tuple(map(float, p)) for p in sc.initial_positions]
    busy_until = np.zeros(F, dtype=int)  # tick at which the taxi is vacant again
    idle_legs = [[] for _ in range(F)]
    occ_legs = [[] for _ in range(F)]

    mismatch = np.zeros(K)
    idle = np.zeros(K)
    supply_share = np.zeros((K, n))
    demand_share = np.zeros((K, n))
    ratios = np.full((K, n), np.nan)
    states = np.zeros((K, 3), dtype=int)
    orders_log: list[Order] = []

    pending = list(sc.requests)
    nxt = 0
    open_reqs: dict[int, list[Request]] = {j: [] for j in range(n)}
    served = expired = 0

    for k in range(K):
        start, end = k * t2, (k + 1) * t2
        for j in range(n):
            keep = [r for r in open_reqs[j]
                    if (sc.slot_of_minute(r.time) + 1) * sc.slot_minutes + (r.time // MINUTES_PER_DAY) * MINUTES_PER_DAY > start]
            expired += len(open_reqs[j]) - len(keep)
            open_reqs[j] = keep
        while nxt < len(pending) and pending[nxt].time < end:
            r = pending[nxt]
            open_reqs[r.origin_region].append(r)
            nxt += 1

        vacant = [i for i in range(F) if busy_until[i] <= k]
        moved = set()
        tick_idle = []
        if dispatcher is not None:
            snap = FleetSnapshot(tuple(vacant), np.array([pos[i] for i in vacant]).reshape(-1, 2),
                                 F - len(vacant))
            orders = dispatcher(snap)
            orders_log.extend(orders)
            for o in orders:
                if o.to_region == o.from_region:
                    continue
                i = o.taxi_id
                leg = _manhattan(pos[i], (o.target_lat, o.target_lon)) * miles_per_degree
                idle_legs[i].append(leg)
                tick_idle.append(leg)
                pos[i] = (o.target_lat, o.target_lon)
                moved.add(i)

        vac_regions = (grid.locate([pos[i][0] for i in vacant], [pos[i][1] for i in vacant])
                       if vacant else np.zeros(0, dtype=int))
        supply = np.bincount(vac_regions, minlength=n).astype(float)
        demand = sc.rates[sc.slot_of_minute(start)]
        mismatch[k] = supply_demand_error(supply, demand)
        if supply.sum() > 0:
            supply_share[k] = supply / supply.sum()
        if demand.sum() > 0:
            demand_share[k] = demand / demand.sum()
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios[k] = np.where(demand > 0, supply / np.where(demand > 0, demand, 1.0), np.nan)

        for i, reg in zip(vacant, vac_regions):
            cands = open_reqs[int(reg)]
            if not cands:
                continue
            best = min(cands, key=lambda r: (_manhattan(pos[i], r.origin), r.id))
            cands.remove(best)
            approach = _manhattan(pos[i], best.origin) * miles_per_degree
            idle_legs[i].append(approach)
            tick_idle.append(approach)
            occ_legs[i].append(_manhattan(best.origin, best.dest) * miles_per_degree)
            pos[i] = best.dest
            busy_until[i] = k + trip_ticks
            served += 1

        idle[k] = math.fsum(tick_idle)
        occupied_now = int(np.sum(busy_until > k))
        en_route = sum(1 for i in moved if busy_until[i] <= k)
        states[k] = (F - occupied_now - en_route, en_route, occupied_now)

    expired += sum(len(v) for v in open_reqs.values()) + (len(pending) - nxt)
    taxi_idle = np.array([math.fsum(l) for l in idle_legs])
    taxi_occ = np.array([math.fsum(l) for l in occ_legs])
    taxi_total = taxi_idle + taxi_occ
    metrics = SimMetrics(t2, mismatch, idle, supply_share, demand_share, ratios, states,
                         taxi_idle, taxi_occ, taxi_total, served, expired, F)
    return SimResult(metrics, orders_log)


def run_dispatch_sim(sc: SimScenario, model: DemandModel, cfg: RhcConfig,
                     stations: StationTable | None = None, trip_ticks: int = 1,
                     miles_per_degree: float = DEG_TO_MILES) -> SimResult:
    """Simulate the scenario with RHC orders issued every ``cfg.t2`` minutes."""
    if model.n != sc.grid.n:
        raise ValueError("model and scenario disagree on the number of regions")
    if stations is None:
        stations = generate_stations(sc.grid, sc.fleet_size, derive_seed(sc.seed, "stations"))
    state = RhcState()

    def dispatcher(snap):
        nonlocal state
        orders, state = rhc_step(state, snap, model, cfg, stations, sc.grid)
        return orders

    return _simulate(sc, cfg.t2, dispatcher, trip_ticks, miles_per_degree)


def run_baseline(sc: SimScenario, t2: int, trip_ticks: int = 1,
                 miles_per_degree: float = DEG_TO_MILES) -> SimMetrics:
    """Greedy baseline: vacant taxis only take the nearest request in their own region."""
    return _simulate(sc, t2, None, trip_ticks, miles_per_degree).metrics


def run_replay_baseline(records, grid: RegionGrid, t2: int, day_offset: int = 0,
                        miles_per_degree: float = DEG_TO_MILES) -> SimMetrics:
    """Metrics of the recorded (undispatched) fleet straight from traces.

    Ticks of ``t2`` minutes start at midnight of the first trace day. Supply is
    the set of taxis whose latest record at tick start is vacant; the reference
    demand is the pickups observed during the tick. A segment's mileage is
    booked to the tick of its starting record.
    """
    per_taxi = dict(sorted(records.items())) if isinstance(records, dict) else records
    all_ts = [r.timestamp for recs in per_taxi.values() for r in recs]
    n = grid.n
    if not all_ts:
        return SimMetrics(t2, np.zeros(0), np.zeros(0), np.zeros((0, n)), np.zeros((0, n)),
                          np.zeros((0, n)), fleet_size=len(per_taxi))
    step = 60 * t2
    t0 = ((min(all_ts) + day_offset) // SECONDS_PER_DAY) * SECONDS_PER_DAY - day_offset
    K = (max(all_ts) - t0) // step + 1

    idle = [[] for _ in range(K)]
    supply = np.zeros((K, n))
    pickups = np.zeros((K, n))
    for recs in per_taxi.values():
        for a, b in zip(recs, recs[1:]):
            if not a.occupied:
                idle[(a.timestamp - t0) // step].append(
                    (abs(a.point.lat - b.point.lat) + abs(a.point.lon - b.point.lon)) * miles_per_degree)
        idx = 0
        for k in range(K):
            tick = t0 + k * step
            while idx + 1 < len(recs) and recs[idx + 1].timestamp <= tick:
                idx += 1
            if recs[idx].timestamp <= tick and not recs[idx].occupied:
                supply[k, grid.locate(recs[idx].point.lat, recs[idx].point.lon)] += 1
    for ev in detect_events(per_taxi, grid):
        if ev.kind == "pickup":
            pickups[(ev.timestamp - t0) // step, ev.region - 1] += 1

    mismatch = np.array([supply_demand_error(supply[k], pickups[k]) for k in range(K)])
    with np.errstate(divide="ignore", invalid="ignore"):
        share_s = np.where(supply.sum(1, keepdims=True) > 0, supply / supply.sum(1, keepdims=True), 0.0)
        share_d = np.where(pickups.sum(1, keepdims=True) > 0, pickups / pickups.sum(1, keepdims=True), 0.0)
        ratios = np.where(pickups > 0, supply / np.where(pickups > 0, pickups, 1.0), np.nan)
    return SimMetrics(t2, mismatch, np.array([math.fsum(x) for x in idle]), share_s, share_d, ratios,
                      fleet_size=len(per_taxi))


def _pct(base: float, new: float) -> float:
    if base == 0:
        return 0.0 if new == 0 else math.copysign(math.inf, new)
    return (new - base) / base * 100.0


def compare_metrics(a: SimMetrics, b: SimMetrics) -> dict:
    """Percentage change from ``a`` (reference) to ``b``; negative means ``b`` is lower."""
    if a.num_slots != b.num_slots:
        raise ValueError(f"cannot compare runs with {a.num_slots} and {b.num_slots} slots")
    return {
        "reference_idle_miles": a.total_idle,
        "candidate_idle_miles": b.total_idle,
        "idle_change_pct": _pct(a.total_idle, b.total_idle),
        "reference_mismatch": a.mean_mismatch,
        "candidate_mismatch": b.mean_mismatch,
        "mismatch_change_pct": _pct(a.mean_mismatch, b.mean_mismatch),
    }


def scenario_from_model(model: DemandModel, grid: RegionGrid, fleet_size: int, seed: int = 0,
                        days: int = 1) -> SimScenario:
    """Synthetic scenario whose rates are a model's mean demand (used for trace-estimated models)."""
    if model.n != grid.n:
        raise ValueError(f"model has {model.n} regions but the grid has {grid.n}")
    S1 = model.r_mean.shape[0]
    dest = np.array([model.mobility_at_minute(h * model.t1) for h in range(S1)])
    return synthesize_scenario(grid, fleet_size, model.r_mean, dest, model.t1, seed, days)
