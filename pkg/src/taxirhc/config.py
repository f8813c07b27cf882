"""Run configuration: YAML file plus flag overrides, validated with key paths."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import yaml

from .geo import DEG_TO_MILES, RegionGrid
from .rhc import RhcConfig
from .sim import skewed_rates
from .trace import MINUTES_PER_DAY

DEFAULTS = {
    "seed": 0,
    "out": "out",
    "traces": None,
    "model": None,
    "miles_per_degree": DEG_TO_MILES,
    "bounds": {"min_lat": 37.70, "max_lat": 37.81, "min_lon": -122.51, "max_lon": -122.39},
    "grid": {"rows": 3, "cols": 3},
    "clock": {"t1": 60, "t2": 60, "horizon": 2},
    "dispatch": {"beta": 1.0, "alpha": 0.1, "mode": "nominal", "lp_tol": 1e-9, "max_iters": 100_000},
    "estimate": {"B": 1000, "multiplier": 1.0, "days": "all", "day_offset": 0},
    "scenario": {
        "fleet_size": 30,
        "days": 1,
        "trip_ticks": 1,
        "history_days": 18,
        "history_B": 200,
        "requests_per_slot": 40.0,
        "hotspots": [1, 9],
        "hotspot_share": 0.8,
        "rates": None,
    },
}

# keys whose value may be a scalar or a per-horizon-step list
SCHEDULES = {"dispatch.beta", "dispatch.alpha"}
OPTIONAL_PATHS = {"traces", "model", "scenario.rates"}

SWEEP_KEYS = {
    "beta": "dispatch.beta",
    "alpha": "dispatch.alpha",
    "T": "clock.horizon",
    "t2": "clock.t2",
    "mode": "dispatch.mode",
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


def _merge(base: dict, upd: dict, prefix: str = ""):
    for k, v in upd.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"{path}: unknown key")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path}: expected a mapping")
            _merge(base[k], v, path + ".")
        else:
            base[k] = v


def _typecheck(d: dict, defaults: dict, prefix: str = ""):
    for k, default in defaults.items():
        path, v = f"{prefix}{k}", d[k]
        if isinstance(default, dict):
            _typecheck(v, default, path + ".")
            continue
        if v is None and path in OPTIONAL_PATHS:
            continue
        if path in SCHEDULES:
            vals = v if isinstance(v, list) else [v]
            if not vals or not all(_is_number(x) for x in vals):
                raise ConfigError(f"{path}: expected a number or a list of numbers")
        elif isinstance(default, bool) or default is None:
            if path == "scenario.rates" and not isinstance(v, list):
                raise ConfigError(f"{path}: expected a list of per-slot rate lists")
            if path in ("traces", "model") and not isinstance(v, str):
                raise ConfigError(f"{path}: expected a path")
        elif isinstance(default, int):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{path}: expected an integer, got {v!r}")
        elif isinstance(default, float):
            if isinstance(v, str):
                # YAML 1.1 reads "1e-9" as a string
                try:
                    v = d[k] = float(v)
                except ValueError:
                    pass
            if not _is_number(v):
                raise ConfigError(f"{path}: expected a number, got {v!r}")
        elif isinstance(default, str):
            if not isinstance(v, str):
                raise ConfigError(f"{path}: expected a string, got {v!r}")
        elif isinstance(default, list):
            if not isinstance(v, list):
                raise ConfigError(f"{path}: expected a list, got {v!r}")


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and np.isfinite(x)


def _get(d: dict, path: str):
    for part in path.split("."):
        d = d[part]
    return d


def _set(d: dict, path: str, value):
    parts = path.split(".")
    node = d
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"{path}: unknown key")
        node = node[part]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError(f"{path}: unknown key")
    node[parts[-1]] = value


@dataclass
class RunConfig:
    data: dict

    def get(self, path: str):
        return _get(self.data, path)

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def grid(self) -> RegionGrid:
        return RegionGrid.from_config(self.data)

    def rhc(self) -> RhcConfig:
        c, d = self.data["clock"], self.data["dispatch"]
        beta = tuple(d["beta"]) if isinstance(d["beta"], list) else float(d["beta"])
        alpha = tuple(d["alpha"]) if isinstance(d["alpha"], list) else float(d["alpha"])
        return RhcConfig(c["t1"], c["t2"], c["horizon"], beta, alpha, d["mode"],
                         float(d["lp_tol"]), d["max_iters"])

    def scenario_rates(self) -> np.ndarray:
        sc, n = self.data["scenario"], self.grid().n
        S = MINUTES_PER_DAY // self.data["clock"]["t1"]
        if sc["rates"] is not None:
            rates = np.asarray(sc["rates"], dtype=float)
            return np.tile(rates, (S, 1)) if rates.ndim == 1 else rates
        return skewed_rates(n, sc["requests_per_slot"], [h - 1 for h in sc["hotspots"]],
                            sc["hotspot_share"], S)

    def with_value(self, path: str, value) -> "RunConfig":
        data = copy.deepcopy(self.data)
        _set(data, path, value)
        return validate(data)

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)


def validate(data: dict) -> RunConfig:
    _typecheck(data, DEFAULTS)
    b, g, c, d = data["bounds"], data["grid"], data["clock"], data["dispatch"]
    if not -90 <= b["min_lat"] < b["max_lat"] <= 90:
        raise ConfigError("bounds.min_lat: must be below bounds.max_lat (both within [-90, 90])")
    if not -180 <= b["min_lon"] < b["max_lon"] <= 180:
        raise ConfigError("bounds.min_lon: must be below bounds.max_lon (both within [-180, 180])")
    for k in ("rows", "cols"):
        if g[k] < 1:
            raise ConfigError(f"grid.{k}: must be at least 1")
    n = g["rows"] * g["cols"]
    if c["t1"] <= 0 or MINUTES_PER_DAY % c["t1"]:
        raise ConfigError(f"clock.t1: must be a positive divisor of {MINUTES_PER_DAY}")
    if c["t2"] <= 0 or c["t1"] % c["t2"]:
        raise ConfigError("clock.t2: must be a positive divisor of clock.t1")
    if c["horizon"] < 1:
        raise ConfigError("clock.horizon: must be at least 1")
    for k, positive in (("beta", False), ("alpha", True)):
        vals = d[k] if isinstance(d[k], list) else [d[k]]
        if len(vals) not in (1, c["horizon"]):
            raise ConfigError(f"dispatch.{k}: needs 1 or clock.horizon={c['horizon']} values")
        if any(v <= 0 if positive else v < 0 for v in vals):
            raise ConfigError(f"dispatch.{k}: must be {'positive' if positive else 'nonnegative'}")
    if d["mode"] not in ("nominal", "robust"):
        raise ConfigError(f"dispatch.mode: must be nominal or robust, got {d['mode']!r}")
    if d["lp_tol"] <= 0:
        raise ConfigError("dispatch.lp_tol: must be positive")
    if d["max_iters"] < 1:
        raise ConfigError("dispatch.max_iters: must be at least 1")
    e = data["estimate"]
    if e["B"] < 1:
        raise ConfigError("estimate.B: must be at least 1")
    if e["multiplier"] < 0:
        raise ConfigError("estimate.multiplier: must be nonnegative")
    if e["days"] not in ("all", "weekday", "weekend"):
        raise ConfigError(f"estimate.days: must be all, weekday or weekend, got {e['days']!r}")
    s = data["scenario"]
    for k in ("fleet_size", "days", "trip_ticks", "history_days", "history_B"):
        if s[k] < 1:
            raise ConfigError(f"scenario.{k}: must be at least 1")
    if s["requests_per_slot"] < 0:
        raise ConfigError("scenario.requests_per_slot: must be nonnegative")
    if not 0 <= s["hotspot_share"] <= 1:
        raise ConfigError("scenario.hotspot_share: must lie in [0, 1]")
    if any(not isinstance(h, int) or not 1 <= h <= n for h in s["hotspots"]):
        raise ConfigError(f"scenario.hotspots: region ids must lie in 1..{n}")
    if len(set(s["hotspots"])) != len(s["hotspots"]):
        raise ConfigError("scenario.hotspots: duplicate region ids")
    if s["rates"] is not None:
        try:
            rates = np.asarray(s["rates"], dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("scenario.rates: expected a rectangular list of numbers") from None
        S = MINUTES_PER_DAY // c["t1"]
        if rates.shape not in ((n,), (S, n)):
            raise ConfigError(f"scenario.rates: expected shape ({n},) or ({S}, {n}), got {rates.shape}")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ConfigError("scenario.rates: rates must be finite and nonnegative")
    if data["miles_per_degree"] <= 0:
        raise ConfigError("miles_per_degree: must be positive")
    return RunConfig(data)


def parse_assignment(text: str):
    """``key=value`` with the value parsed as YAML (so ``2``, ``0.5``, ``[1, 2]`` work)."""
    if "=" not in text:
        raise ConfigError(f"{text}: expected key=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the YAML file at ``path``, then ``(key.path, value)`` overrides."""
    data = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: not valid YAML ({e})") from None
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
            _merge(data, loaded)
    for key, value in overrides:
        _set(data, key, value)
    return validate(data)


def parse_sweep(text: str):
    """``beta=0,2,10`` -> (config path, [values])."""
    if "=" not in text:
        raise ConfigError(f"--sweep {text}: expected key=v1,v2,...")
    key, raw = text.split("=", 1)
    key = key.strip()
    if key not in SWEEP_KEYS:
        raise ConfigError(f"--sweep {key}: can sweep only {', '.join(sorted(SWEEP_KEYS))}")
    values = [yaml.safe_load(v) for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"--sweep {key}: no values given")
    return SWEEP_KEYS[key], values
