"""Parse geo-referenced event CSVs, assign regions, aggregate monthly grids.

The pipeline is: parse_events -> assign_regions -> aggregate_counts ->
set_warmup. All functions are pure; records and grids are treated as
immutable values.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .ioutil import InputError, read_json, write_csv, write_json

DEFAULT_COLUMNS = {
    "date": "date",
    "lat": "lat",
    "lon": "lon",
    "event_type": "event_type",
    "country": "country",
    "region_id": "region_id",
}


# ---------------------------------------------------------------------------
# Year-month arithmetic. Months are packed as year*12 + (month-1) so that
# subtraction gives month offsets directly.

_YM_RE = re.compile(r"^(\d{4})-(\d{2})$")


def parse_year_month(s: str) -> int:
    m = _YM_RE.match(s.strip())
    if not m:
        raise InputError(f"expected YYYY-MM, got {s!r}")
    year, month = int(m.group(1)), int(m.group(2))
    if not 1 <= month <= 12:
        raise InputError(f"month out of range in {s!r}")
    return year * 12 + (month - 1)


def format_year_month(packed: int) -> str:
    return f"{packed // 12:04d}-{packed % 12 + 1:02d}"


def date_to_packed_month(d: dt.date) -> int:
    return d.year * 12 + (d.month - 1)


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class EventRecord:
    date: dt.date
    lon: float
    lat: float
    event_type: str
    country: str
    region_id: Optional[str] = None


@dataclass(frozen=True)
class RegionSet:
    """Ordered regions; the order defines the grid column index."""

    ids: tuple
    xy: np.ndarray  # (R, 2) of (cx, cy) in degrees, row order matches ids

    def __post_init__(self):
        if len(self.ids) == 0:
            raise InputError("region set is empty")
        if len(set(self.ids)) != len(self.ids):
            raise InputError("duplicate region_id in region set")
        xy = np.asarray(self.xy, dtype=float)
        if xy.shape != (len(self.ids), 2):
            raise InputError("region coordinate array must be (R, 2)")
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self) -> dict:
        return {rid: i for i, rid in enumerate(self.ids)}

    @classmethod
    def from_csv(cls, path) -> "RegionSet":
        path = Path(path)
        if not path.exists():
            raise InputError(f"centroid file not found: {path}")
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"centroid file is empty: {path}") from None
            if [h.strip() for h in header] != ["region_id", "cx", "cy"]:
                raise InputError(
                    f"centroid file must have header region_id,cx,cy, got {','.join(header)}"
                )
            ids, xy = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise InputError(f"{path}:{lineno}: expected 3 columns")
                try:
                    ids.append(row[0])
                    xy.append((float(row[1]), float(row[2])))
                except ValueError:
                    raise InputError(f"{path}:{lineno}: bad coordinate") from None
        return cls(ids=tuple(ids), xy=np.array(xy, dtype=float))

    def to_csv(self, path) -> None:
        write_csv(path, ["region_id", "cx", "cy"], [(r, x, y) for r, (x, y) in zip(self.ids, self.xy)])


@dataclass(frozen=True)
class EventGrid:
    """T x R monthly counts. Row t is calendar month start_month + t.

    warmup rows are history only: likelihood consumers skip rows
    0..warmup-1 as observation terms but still feed them into intensity
    sums.
    """

    counts: np.ndarray  # (T, R) non-negative integers
    start_month: str  # YYYY-MM of row 0
    region_ids: tuple
    warmup: int = 0

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise InputError("counts must be a T x R matrix")
        if counts.size and (np.any(counts < 0) or np.any(counts != np.floor(counts))):
            raise InputError("counts must be non-negative integers")
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "region_ids", tuple(str(r) for r in self.region_ids))
        if counts.shape[1] != len(self.region_ids):
            raise InputError("counts columns must match region_ids")
        parse_year_month(self.start_month)  # validate format
        if not 0 <= self.warmup < max(counts.shape[0], 1):
            raise InputError("warmup must satisfy 0 <= warmup < T")

    @property
    def n_months(self) -> int:
        return self.counts.shape[0]

    @property
    def n_regions(self) -> int:
        return self.counts.shape[1]

    def n_likelihood_cells(self) -> int:
        return (self.n_months - self.warmup) * self.n_regions

    def monthly_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(frozen=True)
class ParseResult:
    records: list
    skipped: list = field(default_factory=list)  # (line_number, reason) pairs


# ---------------------------------------------------------------------------
# Operations


def _open_source(source):
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise InputError(f"event file not found: {path}")
        return open(path, "r", encoding="utf-8", newline="")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    return source  # file-like


def parse_events(source, column_map: Optional[Mapping[str, str]] = None,
                 policy: str = "fail") -> ParseResult:
    """Read event rows from a header-first UTF-8 CSV.

    column_map maps roles (date, lat, lon, event_type, country, region_id)
    to column names; unmapped roles use the role name itself. region_id is
    optional: if its column is absent the field stays None.

    policy is "fail" (raise on the first bad row, with its line number) or
    "skip" (drop bad rows and record them in ParseResult.skipped).
    """
    if policy not in ("fail", "skip"):
        raise InputError(f"unknown row policy {policy!r}")
    cols = dict(DEFAULT_COLUMNS)
    if column_map:
        unknown = set(column_map) - set(DEFAULT_COLUMNS)
        if unknown:
            raise InputError(f"unknown column roles: {sorted(unknown)}")
        cols.update(column_map)

    fh = _open_source(source)
    close = isinstance(source, (str, Path, bytes))
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return ParseResult(records=[])
        fieldset = set(reader.fieldnames)
        required = ["date", "lat", "lon", "event_type", "country"]
        missing = [cols[r] for r in required if cols[r] not in fieldset]
        if missing:
            raise InputError(f"event file is missing columns: {missing}")
        has_region = cols["region_id"] in fieldset

        records: list = []
        skipped: list = []
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(_parse_row(row, cols, has_region))
            except InputError as exc:
                if policy == "fail":
                    raise InputError(f"line {lineno}: {exc}") from None
                skipped.append((lineno, str(exc)))
        return ParseResult(records=records, skipped=skipped)
    finally:
        if close:
            fh.close()


def _parse_row(row, cols, has_region) -> EventRecord:
    raw_date = (row.get(cols["date"]) or "").strip()
    try:
        date = dt.date.fromisoformat(raw_date)
    except ValueError:
        raise InputError(f"malformed date {raw_date!r}") from None
    try:
        lat = float(row[cols["lat"]])
        lon = float(row[cols["lon"]])
    except (TypeError, ValueError):
        raise InputError("malformed coordinate") from None
    if not -90.0 <= lat <= 90.0:
        raise InputError(f"latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise InputError(f"longitude {lon} outside [-180, 180]")
    region = None
    if has_region:
        region = (row.get(cols["region_id"]) or "").strip() or None
    return EventRecord(
        date=date,
        lon=lon,
        lat=lat,
        event_type=(row.get(cols["event_type"]) or "").strip(),
        country=(row.get(cols["country"]) or "").strip(),
        region_id=region,
    )


def assign_regions(events: Sequence[EventRecord], regions: RegionSet) -> list:
    """Fill region_id on every record.

    Pre-assigned ids are kept (and validated); everything else gets the
    nearest centroid in Euclidean degree space, ties to the lower region
    index. Idempotent: a second pass changes nothing.
    """
    index = regions.index_of()
    cx = regions.xy[:, 0]
    cy = regions.xy[:, 1]
    out = []
    for ev in events:
        if ev.region_id is not None:
            if ev.region_id not in index:
                raise InputError(f"unknown region_id {ev.region_id!r}")
            out.append(ev)
            continue
        d2 = (cx - ev.lon) ** 2 + (cy - ev.lat) ** 2
        # argmin returns the first minimum, which is the tie rule we want
        out.append(replace(ev, region_id=regions.ids[int(np.argmin(d2))]))
    return out


def aggregate_counts(events: Sequence[EventRecord], regions: RegionSet,
                     start: str, end: str,
                     event_type: Optional[str] = None,
                     country: Optional[str] = None) -> EventGrid:
    """Count filtered events per (month, region) over [start, end] inclusive.

    Events outside the window are dropped silently; months with no events
    are explicit zero rows.
    """
    p_start = parse_year_month(start)
    p_end = parse_year_month(end)
    if p_start > p_end:
        raise InputError(f"start {start} is after end {end}")
    T = p_end - p_start + 1
    index = regions.index_of()
    counts = np.zeros((T, len(regions)), dtype=np.int64)
    for ev in events:
        if ev.region_id is None:
            raise InputError("event without region_id; run assign_regions first")
        if event_type is not None and ev.event_type != event_type:
            continue
        if country is not None and ev.country != country:
            continue
        t = date_to_packed_month(ev.date) - p_start
        if 0 <= t < T:
            counts[t, index[ev.region_id]] += 1
    return EventGrid(counts=counts, start_month=start, region_ids=regions.ids)


def set_warmup(grid: EventGrid, t_max: int) -> EventGrid:
    """Mark the first t_max rows as history-only."""
    if t_max < 0:
        raise InputError("t_max must be non-negative")
    if t_max >= grid.n_months:
        raise InputError(f"warmup {t_max} must be below the month count {grid.n_months}")
    return replace(grid, warmup=int(t_max))


# ---------------------------------------------------------------------------
# Serialization: long-format CSV plus a JSON sidecar for the metadata the
# CSV cannot carry (start month, warmup, region order).


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_grid(grid: EventGrid, csv_path) -> None:
    rows = []
    for t in range(grid.n_months):
        for r, rid in enumerate(grid.region_ids):
            rows.append((t, rid, int(grid.counts[t, r])))
    write_csv(csv_path, ["month_index", "region_id", "count"], rows)
    write_json(sidecar_path(csv_path), {
        "start_month": grid.start_month,
        "warmup": grid.warmup,
        "regions": list(grid.region_ids),
    })


def read_grid(csv_path) -> EventGrid:
    csv_path = Path(csv_path)
    side = sidecar_path(csv_path)
    if not csv_path.exists():
        raise InputError(f"grid file not found: {csv_path}")
    if not side.exists():
        raise InputError(f"grid sidecar not found: {side}")
    meta = read_json(side)
    region_ids = tuple(str(r) for r in meta["regions"])
    index = {rid: i for i, rid in enumerate(region_ids)}
    cells = {}
    max_t = -1
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"month_index", "region_id", "count"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise InputError(f"grid file must have columns month_index,region_id,count: {csv_path}")
        for row in reader:
            t = int(row["month_index"])
            rid = str(row["region_id"])
            if rid not in index:
                raise InputError(f"grid row names unknown region {rid!r}")
            cells[(t, index[rid])] = int(row["count"])
            max_t = max(max_t, t)
    T = max_t + 1
    counts = np.zeros((T, len(region_ids)), dtype=np.int64)
    for (t, r), c in cells.items():
        counts[t, r] = c
    return EventGrid(counts=counts, start_month=str(meta["start_month"]),
                     region_ids=region_ids, warmup=int(meta["warmup"]))
