"""GPS/occupancy trace ingestion and event extraction.

Trace files follow the cabspotting layout: one file per taxi (file name is the
taxi id), each line ``lat lon occupied unix_time`` separated by whitespace.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geo import DEG_TO_MILES, GeoPoint, RegionGrid, assign_region, manhattan_deg

SECONDS_PER_DAY = 86400
MINUTES_PER_DAY = 1440


class TraceParseError(ValueError):
    def __init__(self, message: str, line_no: int, source: str = "<stream>"):
        super().__init__(f"{source}:{line_no}: {message}")
        self.line_no = line_no
        self.source = source


@dataclass(frozen=True)
class TraceRecord:
    taxi_id: str
    point: GeoPoint
    occupied: bool
    timestamp: int


@dataclass(frozen=True)
class Event:
    kind: str  # "pickup" or "dropoff"
    taxi_id: str
    region: int  # 1-based
    timestamp: int
    point: GeoPoint


def parse_trace(lines, taxi_id: str = "0", source: str = "<stream>") -> list[TraceRecord]:
    """Parse one taxi's trace into records sorted by time.

    Duplicate timestamps keep the record that appears last in the input.
    """
    by_time: dict[int, TraceRecord] = {}
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 4:
            raise TraceParseError(f"expected 4 fields, got {len(fields)}", line_no, source)
        try:
            lat, lon = float(fields[0]), float(fields[1])
            occ = int(fields[2])
            ts = int(fields[3])
        except ValueError:
            raise TraceParseError(f"unparseable line {line!r}", line_no, source) from None
        if occ not in (0, 1):
            raise TraceParseError(f"occupancy must be 0 or 1, got {occ}", line_no, source)
        try:
            point = GeoPoint(lat, lon)
        except ValueError as e:
            raise TraceParseError(str(e), line_no, source) from None
        by_time[ts] = TraceRecord(taxi_id, point, bool(occ), ts)
    return [by_time[t] for t in sorted(by_time)]


def load_trace_dir(path) -> dict[str, list[TraceRecord]]:
    """Read every regular file in ``path``; keys are file stems, sorted."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"trace directory {path} does not exist")
    out = {}
    for f in sorted(p for p in path.iterdir() if p.is_file() and not p.name.startswith(".")):
        with f.open() as fh:
            out[f.stem] = parse_trace(fh, taxi_id=f.stem, source=str(f))
    return dict(sorted(out.items()))


def _per_taxi(records) -> dict:
    if isinstance(records, dict):
        return records
    grouped: dict = {}
    for rec in records:
        grouped.setdefault(rec.taxi_id, []).append(rec)
    return grouped


def detect_events(records, grid: RegionGrid) -> list[Event]:
    """Pickups (0 -> 1) and dropoffs (1 -> 0), placed at the later record.

    ``records`` is either a ``{taxi_id: sorted records}`` mapping or a flat list
    already sorted per taxi. Output is ordered by taxi id, then time.
    """
    events = []
    for tid, recs in sorted(_per_taxi(records).items()):
        for prev, cur in zip(recs, recs[1:]):
            if prev.occupied == cur.occupied:
                continue
            kind = "pickup" if cur.occupied else "dropoff"
            events.append(Event(kind, tid, assign_region(grid, cur.point), cur.timestamp, cur.point))
    return events


def day_of(timestamp: int, day_offset: int = 0) -> int:
    """Day number (days since epoch) after shifting by ``day_offset`` seconds."""
    return (timestamp + day_offset) // SECONDS_PER_DAY


def slot_of(timestamp: int, slot_minutes: int, day_offset: int = 0) -> int:
    """1-based slot within the day: ``ceil(minute / slot_minutes)``, midnight in slot 1."""
    s = (timestamp + day_offset) % SECONDS_PER_DAY
    return max(1, -(-s // (60 * slot_minutes)))


def is_weekend(day: int) -> bool:
    return (dt.date(1970, 1, 1) + dt.timedelta(days=day)).weekday() >= 5


def _check_slot(slot_minutes: int):
    if slot_minutes <= 0 or MINUTES_PER_DAY % slot_minutes:
        raise ValueError(f"slot length {slot_minutes} must divide {MINUTES_PER_DAY}")


@dataclass
class SlotCounts:
    """Pickups and dropoffs per (slot, region) for one day. Arrays are (slots, n)."""

    slot_minutes: int
    pickups: np.ndarray
    dropoffs: np.ndarray

    @classmethod
    def zeros(cls, slot_minutes: int, n: int) -> "SlotCounts":
        S = MINUTES_PER_DAY // slot_minutes
        return cls(slot_minutes, np.zeros((S, n), dtype=np.int64), np.zeros((S, n), dtype=np.int64))

    @property
    def num_slots(self) -> int:
        return self.pickups.shape[0]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "region", "pickups", "dropoffs"])
            for h in range(self.num_slots):
                for j in range(self.pickups.shape[1]):
                    w.writerow([h + 1, j + 1, int(self.pickups[h, j]), int(self.dropoffs[h, j])])

    @classmethod
    def from_csv(cls, path, slot_minutes: int, n: int) -> "SlotCounts":
        out = cls.zeros(slot_minutes, n)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                h, j = int(row["slot"]) - 1, int(row["region"]) - 1
                out.pickups[h, j] = int(row["pickups"])
                out.dropoffs[h, j] = int(row["dropoffs"])
        return out


@dataclass
class TransitionCounts:
    """Trip counts per slot: ``counts[h, i, j]`` trips from region i+1 to j+1."""

    slot_minutes: int
    counts: np.ndarray

    @classmethod
    def zeros(cls, slot_minutes: int, n: int) -> "TransitionCounts":
        S = MINUTES_PER_DAY // slot_minutes
        return cls(slot_minutes, np.zeros((S, n, n), dtype=np.int64))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "from", "to", "count"])
            for h, i, j in zip(*np.nonzero(self.counts)):
                w.writerow([h + 1, i + 1, j + 1, int(self.counts[h, i, j])])


def aggregate_counts(events, slot_minutes: int, grid: RegionGrid, day_offset: int = 0,
                     days=None) -> dict[int, SlotCounts]:
    """Per-day pickup/dropoff counts. ``days`` forces empty days to appear."""
    _check_slot(slot_minutes)
    out = {d: SlotCounts.zeros(slot_minutes, grid.n) for d in (days or ())}
    for ev in events:
        d = day_of(ev.timestamp, day_offset)
        sc = out.get(d)
        if sc is None:
            sc = out[d] = SlotCounts.zeros(slot_minutes, grid.n)
        h = slot_of(ev.timestamp, slot_minutes, day_offset) - 1
        target = sc.pickups if ev.kind == "pickup" else sc.dropoffs
        target[h, ev.region - 1] += 1
    return dict(sorted(out.items()))


def count_transitions(records, slot_minutes: int, grid: RegionGrid, day_offset: int = 0,
                      days=None) -> dict[int, TransitionCounts]:
    """Per-day trip counts binned by the pickup slot; open trips are dropped."""
    _check_slot(slot_minutes)
    out = {d: TransitionCounts.zeros(slot_minutes, grid.n) for d in (days or ())}
    pending = {}
    for ev in detect_events(records, grid):
        if ev.kind == "pickup":
            pending[ev.taxi_id] = ev
            continue
        start = pending.pop(ev.taxi_id, None)
        if start is None:
            continue  # trace began mid-trip
        d = day_of(start.timestamp, day_offset)
        tc = out.get(d)
        if tc is None:
            tc = out[d] = TransitionCounts.zeros(slot_minutes, grid.n)
        h = slot_of(start.timestamp, slot_minutes, day_offset) - 1
        tc.counts[h, start.region - 1, ev.region - 1] += 1
    return dict(sorted(out.items()))


def trace_mileage(records: list[TraceRecord], filter: str = "all",
                  factor: float = DEG_TO_MILES) -> float:
    """Miles along consecutive records; a segment belongs to its starting record's state."""
    if filter not in ("all", "vacant", "occupied"):
        raise ValueError(f"unknown filter {filter!r}")
    total = []
    for a, b in zip(records, records[1:]):
        if filter == "vacant" and a.occupied:
            continue
        if filter == "occupied" and not a.occupied:
            continue
        total.append(manhattan_deg(a.point, b.point))
    return math.fsum(total) * factor


def trace_days(records, day_offset: int = 0) -> list[int]:
    days = set()
    for recs in _per_taxi(records).values():
        days.update(day_of(r.timestamp, day_offset) for r in recs)
    return sorted(days)
