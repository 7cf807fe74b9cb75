"""Event records (3D modality) binned into a tract x time observation cube."""

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import shapely
from shapely.geometry import MultiPolygon, Polygon

from .._io import array_hash, read_json, write_manifest

logger = logging.getLogger(__name__)


class EventError(ValueError):
    pass


@dataclass
class ObservationCube:
    """T x N integer counts on a regular clock with spacing ``interval`` hours."""

    time_index: pd.DatetimeIndex
    tract_ids: list
    counts: np.ndarray
    interval: int

    def __post_init__(self):
        self.time_index = pd.DatetimeIndex(self.time_index)
        self.tract_ids = [str(t) for t in self.tract_ids]
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape != (len(self.time_index), len(self.tract_ids)):
            raise EventError(f"counts shape {counts.shape} does not match time x tracts")
        if counts.size and (np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0))):
            raise EventError("counts must be non-negative integers")
        self.counts = counts.astype(np.int64)
        if len(self.time_index) > 1:
            steps = np.diff(self.time_index.asi8)
            expected = pd.Timedelta(hours=self.interval).value
            if np.any(steps != expected):
                raise EventError("timestamps must be strictly increasing with constant spacing")

    @property
    def T(self) -> int:
        return self.counts.shape[0]

    @property
    def N(self) -> int:
        return self.counts.shape[1]

    def zero_rate(self) -> float:
        return float(np.mean(self.counts == 0)) if self.counts.size else 1.0

    def to_csv(self, path) -> Path:
        df = pd.DataFrame(self.counts, columns=self.tract_ids)
        df.insert(0, "timestamp", self.time_index.strftime("%Y-%m-%dT%H:%M:%S"))
        df.to_csv(path, index=False)
        return Path(path)

    @classmethod
    def from_csv(cls, path, interval: int) -> "ObservationCube":
        df = pd.read_csv(path)
        ids = list(df.columns[1:])
        return cls(pd.to_datetime(df["timestamp"]), ids, df[ids].to_numpy(dtype=np.int64), interval)

    def save(self, directory, name="observations", dropped=None) -> Path:
        """Write ``<name>.csv`` plus a manifest with zero rate, drop tally and hashes."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv = self.to_csv(directory / f"{name}.csv")
        write_manifest(
            directory / f"{name}.manifest.json",
            {"counts": csv},
            kind="observation_cube",
            interval_hours=self.interval,
            rows=self.T,
            tracts=self.N,
            total_events=int(self.counts.sum()),
            zero_rate=self.zero_rate(),
            dropped=dict(dropped or {}),
            counts_hash=array_hash(self.counts),
        )
        return csv

    @classmethod
    def load(cls, directory, name="observations") -> "ObservationCube":
        directory = Path(directory)
        manifest = read_json(directory / f"{name}.manifest.json")
        return cls.from_csv(directory / f"{name}.csv", manifest["interval_hours"])


@dataclass
class DropReport:
    """Tally of event rows that did not land in the cube, keyed by reason."""

    input_rows: int = 0
    reasons: Counter = field(default_factory=Counter)

    @property
    def dropped(self) -> int:
        return sum(self.reasons.values())

    def as_dict(self) -> dict:
        return {"input_rows": self.input_rows, "dropped": self.dropped, **dict(sorted(self.reasons.items()))}


def _tract_shapes(tracts):
    shapes = []
    for t in tracts:
        if not t.polygon:
            shapes.append(None)
            continue
        polys = [Polygon([(lon, lat) for lat, lon in ring]) for ring in t.polygon]
        shapes.append(polys[0] if len(polys) == 1 else MultiPolygon(polys))
    return shapes


def locate_points(lat: np.ndarray, lon: np.ndarray, tracts) -> np.ndarray:
    """Index of the containing tract for each point, -1 if none (boundary counts as inside).

    A point on a shared edge goes to the tract with the smallest index.
    """
    shapes = _tract_shapes(tracts)
    valid = [i for i, s in enumerate(shapes) if s is not None]
    out = np.full(len(lat), -1, dtype=np.int64)
    if not valid or len(lat) == 0:
        return out
    tree = shapely.STRtree([shapes[i] for i in valid])
    points = shapely.points(lon, lat)
    pt_idx, geom_idx = tree.query(points, predicate="intersects")
    order = np.lexsort((geom_idx, pt_idx))
    for p, g in zip(pt_idx[order], geom_idx[order]):
        if out[p] < 0:
            out[p] = valid[g]
    return out


def rasterize_events(events, tracts, interval: int, start, end) -> tuple[ObservationCube, DropReport]:
    """Count events per (time bin, tract) over ``[start, end)``.

    ``events`` is a DataFrame (or CSV path) with a ``timestamp`` column and
    either ``tract_id`` or ``lat``/``lon``. Rows carrying a tract_id use it
    directly; the rest are matched by point-in-polygon. Rows that cannot be
    placed are tallied in the returned :class:`DropReport`, never discarded
    silently. Timezone-aware timestamps are converted to UTC.
    """
    if interval <= 0:
        raise EventError("interval must be a positive number of hours")
    start, end = pd.Timestamp(start), pd.Timestamp(end)
    step = pd.Timedelta(hours=interval)
    span = end - start
    if span <= pd.Timedelta(0) or span % step != pd.Timedelta(0):
        raise EventError(f"interval of {interval}h does not divide the window {start} .. {end} evenly")
    if isinstance(events, (str, Path)):
        events = pd.read_csv(events, dtype={"tract_id": str})
    events = events.reset_index(drop=True)
    report = DropReport(input_rows=len(events))
    time_index = pd.date_range(start, end, freq=step, inclusive="left")
    tract_ids = [t.tract_id for t in tracts]
    counts = np.zeros((len(time_index), len(tracts)), dtype=np.int64)
    if len(events) == 0:
        return ObservationCube(time_index, tract_ids, counts, interval), report

    ts = pd.to_datetime(events["timestamp"], errors="coerce", utc=True, format="mixed")
    ts = ts.dt.tz_convert(None)
    bad_ts = ts.isna().to_numpy()
    report.reasons["unparseable_timestamp"] += int(bad_ts.sum())

    node = np.full(len(events), -1, dtype=np.int64)
    has_id = np.zeros(len(events), dtype=bool)
    if "tract_id" in events:
        ids = events["tract_id"]
        has_id = ids.notna().to_numpy() & (ids.astype(str).str.len() > 0).to_numpy()
        pos = {t: i for i, t in enumerate(tract_ids)}
        node[has_id] = [pos.get(str(v), -1) for v in ids[has_id]]
    unknown_id = has_id & (node < 0)
    need_pip = ~has_id
    if {"lat", "lon"} <= set(events.columns):
        lat = pd.to_numeric(events["lat"], errors="coerce").to_numpy()
        lon = pd.to_numeric(events["lon"], errors="coerce").to_numpy()
        coord_ok = need_pip & np.isfinite(lat) & np.isfinite(lon)
        sel = np.flatnonzero(coord_ok)
        node[sel] = locate_points(lat[sel], lon[sel], tracts)
        no_location = need_pip & ~coord_ok
    else:
        coord_ok = np.zeros(len(events), dtype=bool)
        no_location = need_pip
    outside_tracts = coord_ok & (node < 0)

    live = ~bad_ts
    report.reasons["unknown_tract_id"] += int((unknown_id & live).sum())
    report.reasons["missing_location"] += int((no_location & live).sum())
    report.reasons["outside_tracts"] += int((outside_tracts & live).sum())

    placed = live & (node >= 0)
    t_ns = ts.to_numpy(dtype="datetime64[ns]")
    offset = (t_ns[placed] - np.datetime64(start.to_datetime64(), "ns")).astype(np.int64)
    bins = np.floor_divide(offset, step.value)
    in_window = (offset >= 0) & (bins < len(time_index))
    report.reasons["outside_window"] += int((~in_window).sum())
    np.add.at(counts, (bins[in_window], node[placed][in_window]), 1)
    report.reasons = Counter({k: v for k, v in report.reasons.items() if v})
    if report.dropped:
        logger.info("rasterize_events: dropped %d of %d rows %s", report.dropped, report.input_rows,
                    dict(report.reasons))
    return ObservationCube(time_index, tract_ids, counts, interval), report
