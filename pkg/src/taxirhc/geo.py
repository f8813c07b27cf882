"""City partition, point-to-region lookup and per-taxi station tables.

Region ids exposed to callers are 1-based and row-major, starting from the
``(min_lat, min_lon)`` corner. Array code works with 0-based indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEG_TO_MILES = 70.0  # 0.1 degree is roughly 7 miles in San Francisco


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class RegionGrid:
    min_lat: float
    max_lat: float
    min_lon: float
    max_lon: float
    rows: int
    cols: int

    def __post_init__(self):
        if not self.min_lat < self.max_lat:
            raise ValueError("min_lat must be below max_lat")
        if not self.min_lon < self.max_lon:
            raise ValueError("min_lon must be below max_lon")
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")

    @classmethod
    def from_config(cls, cfg: dict) -> "RegionGrid":
        """Build from ``bounds.*`` and ``grid.*`` keys (nested dicts)."""
        b, g = cfg["bounds"], cfg["grid"]
        return cls(float(b["min_lat"]), float(b["max_lat"]), float(b["min_lon"]),
                   float(b["max_lon"]), int(g["rows"]), int(g["cols"]))

    @property
    def n(self) -> int:
        return self.rows * self.cols

    @property
    def cell_height(self) -> float:
        return (self.max_lat - self.min_lat) / self.rows

    @property
    def cell_width(self) -> float:
        return (self.max_lon - self.min_lon) / self.cols

    def locate(self, lat, lon) -> np.ndarray:
        """Vectorised 0-based region index; out-of-bounds points are clamped."""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        r = np.floor((lat - self.min_lat) / self.cell_height).astype(int)
        c = np.floor((lon - self.min_lon) / self.cell_width).astype(int)
        r = np.clip(r, 0, self.rows - 1)
        c = np.clip(c, 0, self.cols - 1)
        return r * self.cols + c

    def cell_bounds(self, region: int) -> tuple[float, float, float, float]:
        """``(lat_lo, lat_hi, lon_lo, lon_hi)`` of a 1-based region."""
        if not 1 <= region <= self.n:
            raise ValueError(f"region {region} outside 1..{self.n}")
        r, c = divmod(region - 1, self.cols)
        lat_lo = self.min_lat + r * self.cell_height
        lon_lo = self.min_lon + c * self.cell_width
        return lat_lo, lat_lo + self.cell_height, lon_lo, lon_lo + self.cell_width

    def centers(self) -> np.ndarray:
        """(n, 2) array of cell centres."""
        out = np.empty((self.n, 2))
        for j in range(self.n):
            a, b, c, d = self.cell_bounds(j + 1)
            out[j] = (a + b) / 2, (c + d) / 2
        return out

    def sample_points(self, region: int, size: int, rng: np.random.Generator) -> np.ndarray:
        lat_lo, lat_hi, lon_lo, lon_hi = self.cell_bounds(region)
        pts = np.column_stack([rng.uniform(lat_lo, lat_hi, size), rng.uniform(lon_lo, lon_hi, size)])
        # uniform() can round onto the open upper edge
        pts[:, 0] = np.minimum(pts[:, 0], np.nextafter(lat_hi, lat_lo))
        pts[:, 1] = np.minimum(pts[:, 1], np.nextafter(lon_hi, lon_lo))
        return pts


def assign_region(grid: RegionGrid, p: GeoPoint) -> int:
    """1-based region containing ``p``.

    Cells are half-open except on the top/right edge of the grid, which is
    closed; points outside the grid snap to the nearest cell.
    """
    if not (math.isfinite(p.lat) and math.isfinite(p.lon)):
        raise ValueError("point must be finite")
    return int(grid.locate(p.lat, p.lon)) + 1


def manhattan_deg(p, q) -> float:
    """L1 distance in degrees between two points (GeoPoints or (lat, lon) pairs)."""
    plat, plon = (p.lat, p.lon) if isinstance(p, GeoPoint) else p
    qlat, qlon = (q.lat, q.lon) if isinstance(q, GeoPoint) else q
    return abs(plat - qlat) + abs(plon - qlon)


def deg_to_miles(d: float, factor: float = DEG_TO_MILES) -> float:
    if d < 0:
        raise ValueError("distance must be nonnegative")
    return d * factor


@dataclass
class StationTable:
    """Dispatch destination of every taxi in every region.

    ``coords[i, j]`` is the ``(lat, lon)`` a taxi ``ids[i]`` is sent to when
    dispatched to 0-based region ``j``.
    """

    ids: tuple
    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.ndim != 3 or self.coords.shape[2] != 2:
            raise ValueError("coords must have shape (num_taxis, n, 2)")
        if len(self.ids) != self.coords.shape[0]:
            raise ValueError("one id per taxi row is required")
        self._row = {tid: i for i, tid in enumerate(self.ids)}

    @property
    def num_regions(self) -> int:
        return self.coords.shape[1]

    def for_taxis(self, ids) -> np.ndarray:
        """(len(ids), n, 2) station block for the given taxis."""
        try:
            rows = [self._row[t] for t in ids]
        except KeyError as e:
            raise KeyError(f"no stations for taxi {e.args[0]!r}") from None
        return self.coords[rows]

    def station(self, taxi_id, region: int) -> GeoPoint:
        lat, lon = self.coords[self._row[taxi_id], region - 1]
        return GeoPoint(float(lat), float(lon))


def generate_stations(grid: RegionGrid, num_taxis: int, seed: int, ids=None) -> StationTable:
    """Uniformly random station per taxi per region, reproducible from ``seed``."""
    if num_taxis < 1:
        raise ValueError("num_taxis must be at least 1")
    ids = tuple(range(num_taxis)) if ids is None else tuple(ids)
    if len(ids) != num_taxis:
        raise ValueError("ids must have num_taxis entries")
    rng = np.random.default_rng(seed)
    coords = np.empty((num_taxis, grid.n, 2))
    for j in range(grid.n):
        coords[:, j] = grid.sample_points(j + 1, num_taxis, rng)
    return StationTable(ids, coords)
