"""Bootstrap demand estimation and mobility matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_seed
from .trace import (MINUTES_PER_DAY, aggregate_counts, count_transitions, detect_events,
                    is_weekend, trace_days)

MODEL_FORMAT = "taxirhc-demand-model"
MODEL_VERSION = 1


def bootstrap_mean(daily, B: int, seed: int):
    """Average of ``B`` resampled-with-replacement means over the first axis.

    Sample ``b`` draws its indices from a generator seeded with ``seed + b``,
    so results do not depend on evaluation order.

    Returns
    -------
    mean : ndarray
        Mean of the bootstrap samples, same shape as one daily entry.
    samples : ndarray
        ``(B, ...)`` array of per-sample means.
    """
    daily = np.asarray(daily, dtype=float)
    if daily.ndim == 0 or daily.shape[0] == 0:
        raise ValueError("bootstrap needs at least one daily observation")
    if B < 1:
        raise ValueError("B must be at least 1")
    d = daily.shape[0]
    # shift by the first day so constant data averages exactly
    ref = daily[0]
    dev = daily - ref
    samples = np.empty((B,) + daily.shape[1:])
    for b in range(B):
        idx = np.random.default_rng(seed + b).integers(0, d, size=d)
        samples[b] = dev[idx].mean(axis=0)
    mean = ref + samples.mean(axis=0)
    samples += ref
    return mean, samples


def bootstrap_variance(samples) -> np.ndarray:
    """Biased (1/B) variance of bootstrap samples over the first axis."""
    samples = np.asarray(samples, dtype=float)
    ref = samples[0]
    dev = samples - ref
    centred = dev - dev.mean(axis=0)
    return np.mean(centred ** 2, axis=0)


def demand_interval(mean, variance, multiplier: float = 1.0):
    """``[max(mean - k*sd, 0), mean + k*sd]`` elementwise."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be nonnegative")
    sd = multiplier * np.sqrt(variance)
    return np.maximum(mean - sd, 0.0), mean + sd


def estimate_mobility(counts) -> np.ndarray:
    """Row-normalise trip counts; empty rows become self-loops.

    Accepts a single ``(n, n)`` matrix or a stack ``(S, n, n)``.
    """
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("transition counts must be nonnegative")
    n = counts.shape[-1]
    sums = counts.sum(axis=-1, keepdims=True)
    empty = sums[..., 0] <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        C = np.where(sums > 0, counts / np.where(sums > 0, sums, 1.0), 0.0)
    eye = np.broadcast_to(np.eye(n), C.shape)
    C = np.where(empty[..., None], eye, C)
    # renormalise once more so rows hit 1 to rounding
    return C / C.sum(axis=-1, keepdims=True)


def dropoff_probability(dp) -> np.ndarray:
    dp = np.asarray(dp, dtype=float)
    if np.any(dp < 0):
        raise ValueError("dropoff counts must be nonnegative")
    total = dp.sum()
    if total <= 0:
        return np.full(dp.shape, 1.0 / dp.size)
    return dp / total


@dataclass
class DemandModel:
    """Slot-indexed demand estimates. Arrays are 0-based over slots."""

    t1: int
    t2: int
    r_mean: np.ndarray  # (S1, n)
    r_var: np.ndarray  # (S1, n)
    dp_mean: np.ndarray  # (S1, n)
    r_lo: np.ndarray  # (S1, n)
    r_hi: np.ndarray  # (S1, n)
    mobility: np.ndarray  # (S2, n, n)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("r_mean", "r_var", "dp_mean", "r_lo", "r_hi", "mobility"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        S1, n = self.r_mean.shape
        if S1 != MINUTES_PER_DAY // self.t1:
            raise ValueError(f"expected {MINUTES_PER_DAY // self.t1} demand slots, got {S1}")
        if self.mobility.shape != (MINUTES_PER_DAY // self.t2, n, n):
            raise ValueError(f"mobility must have shape {(MINUTES_PER_DAY // self.t2, n, n)}")
        for name in ("r_var", "dp_mean", "r_lo", "r_hi"):
            if getattr(self, name).shape != (S1, n):
                raise ValueError(f"{name} must have shape {(S1, n)}")
        if np.any(self.r_var < 0) or np.any(self.r_mean < 0) or np.any(self.r_lo < 0):
            raise ValueError("demand estimates must be nonnegative")
        if np.any(self.r_lo > self.r_mean + 1e-12) or np.any(self.r_mean > self.r_hi + 1e-12):
            raise ValueError("interval bounds must bracket the mean")
        if np.any(np.abs(self.mobility.sum(axis=-1) - 1.0) > 1e-9) or np.any(self.mobility < 0):
            raise ValueError("mobility rows must be stochastic")

    @property
    def n(self) -> int:
        return self.r_mean.shape[1]

    def mobility_at_minute(self, minute: int) -> np.ndarray:
        """Mobility matrix for the t2-slot containing ``minute`` of the day (wrapped)."""
        return self.mobility[(minute % MINUTES_PER_DAY) // self.t2]

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "t1": self.t1,
            "t2": self.t2,
            "n": self.n,
            "meta": self.meta,
            "r_mean": self.r_mean.tolist(),
            "r_var": self.r_var.tolist(),
            "dp_mean": self.dp_mean.tolist(),
            "r_lo": self.r_lo.tolist(),
            "r_hi": self.r_hi.tolist(),
            "mobility": self.mobility.tolist(),
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "DemandModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a demand model file (format={d.get('format')!r})")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported demand model version {d.get('version')!r}")
        return cls(int(d["t1"]), int(d["t2"]), d["r_mean"], d["r_var"], d["dp_mean"],
                   d["r_lo"], d["r_hi"], d["mobility"], dict(d.get("meta", {})))

    @classmethod
    def load(cls, path) -> "DemandModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _bootstrap_slots(daily, B, seed, label):
    """Independent bootstrap per slot along axis 1 of ``daily``."""
    S = daily.shape[1]
    means = np.empty(daily.shape[1:])
    variances = np.empty(daily.shape[1:])
    for h in range(S):
        mean, samples = bootstrap_mean(daily[:, h], B, derive_seed(seed, f"{label}/{h}"))
        means[h] = mean
        variances[h] = bootstrap_variance(samples)
    return means, variances


def build_demand_model(daily_pickups, daily_dropoffs, daily_transitions, t1: int, t2: int,
                       B: int = 1000, seed: int = 0, multiplier: float = 1.0,
                       meta: dict | None = None) -> DemandModel:
    """Bootstrap a model from per-day arrays.

    ``daily_pickups``/``daily_dropoffs`` are ``(d, S1, n)``; ``daily_transitions``
    is ``(d, S2, n, n)``.
    """
    P = np.asarray(daily_pickups, dtype=float)
    D = np.asarray(daily_dropoffs, dtype=float)
    T = np.asarray(daily_transitions, dtype=float)
    if P.shape[0] == 0:
        raise ValueError("no days of data to estimate from")
    r_mean, r_var = _bootstrap_slots(P, B, seed, "pickups")
    dp_mean, _ = _bootstrap_slots(D, B, seed, "dropoffs")
    t_mean, _ = _bootstrap_slots(T, B, seed, "transitions")
    lo, hi = demand_interval(r_mean, r_var, multiplier)
    info = {"B": B, "seed": seed, "days": int(P.shape[0]), "interval_multiplier": multiplier}
    info.update(meta or {})
    return DemandModel(t1, t2, r_mean, r_var, dp_mean, lo, hi, estimate_mobility(t_mean), info)


def estimate_from_traces(records, grid, t1: int, t2: int, B: int = 1000, seed: int = 0,
                         multiplier: float = 1.0, day_filter: str = "all",
                         day_offset: int = 0) -> DemandModel:
    """Full pipeline: events -> per-day counts -> bootstrap -> model.

    ``day_filter`` is ``all``, ``weekday`` or ``weekend``.
    """
    if day_filter not in ("all", "weekday", "weekend"):
        raise ValueError(f"unknown day filter {day_filter!r}")
    days = trace_days(records, day_offset)
    if day_filter != "all":
        want = day_filter == "weekend"
        days = [d for d in days if is_weekend(d) == want]
    if not days:
        raise ValueError("no trace days match the selection")
    counts = aggregate_counts(detect_events(records, grid), t1, grid, day_offset, days)
    trans = count_transitions(records, t2, grid, day_offset, days)
    P = np.stack([counts[d].pickups for d in days])
    D = np.stack([counts[d].dropoffs for d in days])
    T = np.stack([trans[d].counts for d in days])
    return build_demand_model(P, D, T, t1, t2, B, seed, multiplier,
                              {"day_filter": day_filter, "day_offset": day_offset})
