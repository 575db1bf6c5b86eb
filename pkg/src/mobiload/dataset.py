"""Per-region data handling: CSV ingestion, hourly alignment, synthetic fixtures.

A RegionSeries couples hourly load/weather, daily mobility indices, a holiday
calendar, and an IANA timezone. Load and weather live on an hourly UTC grid;
mobility stays daily and is replicated across each local day's hours on demand.

CSV schemas (UTF-8, comma separated, header row, '#' lines ignored):
    load.csv      timestamp_utc,load_mw
    weather.csv   timestamp_utc,temp_c,precip_mm,cloud_pct,pressure_hpa
    mobility.csv  date,index_name,value_pct          (100 = baseline)
    holidays.csv  date
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np

from .errors import (
    ConfigError,
    GapTooLarge,
    InvalidSpec,
    MissingFile,
    SchemaMismatch,
)
from .util import (
    HOURS_PER_DAY,
    DateSpan,
    check_keys,
    date_to_day_epoch,
    day_epoch_to_date,
    format_float,
    format_hour_epoch,
    from_hour_epoch,
    parse_utc_timestamp,
    to_hour_epoch,
)

LOAD_HEADER = ("timestamp_utc", "load_mw")
WEATHER_HEADER = ("timestamp_utc", "temp_c", "precip_mm", "cloud_pct", "pressure_hpa")
WEATHER_CHANNELS = WEATHER_HEADER[1:]
MOBILITY_HEADER = ("date", "index_name", "value_pct")
HOLIDAY_HEADER = ("date",)

MAX_LOAD_GAP_HOURS = 6


# ---------------------------------------------------------------------------
# RegionSeries


@dataclass(eq=False)
class RegionSeries:
    """Immutable per-region bundle of load, weather, mobility, and calendar."""

    region_id: str
    timezone: str
    hours: np.ndarray            # int64, strictly increasing hour epochs
    load: np.ndarray             # float64 (n,)
    weather: np.ndarray          # float64 (n, W)
    weather_names: tuple
    mobility_days: np.ndarray    # int64, strictly increasing day epochs (local days)
    mobility: np.ndarray         # float64 (D, M)
    mobility_names: tuple
    holidays: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.hours = np.asarray(self.hours, dtype=np.int64)
        self.load = np.asarray(self.load, dtype=np.float64)
        self.weather = np.asarray(self.weather, dtype=np.float64).reshape(
            len(self.hours), len(self.weather_names)
        )
        self.mobility_days = np.asarray(self.mobility_days, dtype=np.int64)
        self.mobility = np.asarray(self.mobility, dtype=np.float64).reshape(
            len(self.mobility_days), len(self.mobility_names)
        )
        self.weather_names = tuple(self.weather_names)
        self.mobility_names = tuple(self.mobility_names)
        self.holidays = frozenset(self.holidays)
        if np.any(np.diff(self.hours) <= 0):
            raise SchemaMismatch(f"{self.region_id}: timestamps not strictly increasing")
        if self.mobility_days.size and np.any(np.diff(self.mobility_days) <= 0):
            raise SchemaMismatch(f"{self.region_id}: mobility dates not strictly increasing")
        for arr in (self.hours, self.load, self.weather, self.mobility_days, self.mobility):
            arr.flags.writeable = False

    # -- basic accessors ----------------------------------------------------

    @property
    def n_hours(self) -> int:
        return len(self.hours)

    @property
    def tzinfo(self) -> ZoneInfo:
        return ZoneInfo(self.timezone)

    @property
    def timestamps(self):
        return [from_hour_epoch(h) for h in self.hours]

    def hour_index(self, hour: int) -> int:
        i = int(np.searchsorted(self.hours, hour))
        if i >= len(self.hours) or self.hours[i] != hour:
            raise KeyError(f"hour {format_hour_epoch(hour)} not in series")
        return i

    def is_hourly_complete(self) -> bool:
        return self.n_hours > 0 and bool(np.all(np.diff(self.hours) == 1))

    def local_days(self) -> np.ndarray:
        """Local calendar day (day epoch) of every grid hour."""
        tz = self.tzinfo
        out = np.empty(self.n_hours, dtype=np.int64)
        for i, h in enumerate(self.hours):
            out[i] = date_to_day_epoch(from_hour_epoch(h).astimezone(tz).date())
        return out

    def mobility_row(self, day: date) -> np.ndarray:
        d = date_to_day_epoch(day)
        i = int(np.searchsorted(self.mobility_days, d))
        if i >= len(self.mobility_days) or self.mobility_days[i] != d:
            raise KeyError(f"no mobility for {day}")
        return self.mobility[i]

    def mobility_hourly(self) -> np.ndarray:
        """Daily mobility replicated onto the hourly grid via the local day."""
        days = self.local_days()
        idx = np.searchsorted(self.mobility_days, days)
        if np.any(idx >= len(self.mobility_days)) or np.any(self.mobility_days[idx] != days):
            raise GapTooLarge(f"{self.region_id}: mobility does not cover every local day")
        return self.mobility[idx]

    def __eq__(self, other):
        if not isinstance(other, RegionSeries):
            return NotImplemented
        return (
            self.region_id == other.region_id
            and self.timezone == other.timezone
            and self.weather_names == other.weather_names
            and self.mobility_names == other.mobility_names
            and self.holidays == other.holidays
            and np.array_equal(self.hours, other.hours)
            and np.array_equal(self.load, other.load)
            and np.array_equal(self.weather, other.weather)
            and np.array_equal(self.mobility_days, other.mobility_days)
            and np.array_equal(self.mobility, other.mobility)
        )


# ---------------------------------------------------------------------------
# Alignment


def _fill_channel(grid: np.ndarray, obs_hours: np.ndarray, obs_vals: np.ndarray,
                  label: str, max_gap: int):
    """Place observations on the grid, linearly interpolating runs <= max_gap.

    Runs longer than max_gap, and runs touching a grid edge (nothing to anchor
    the interpolation), raise GapTooLarge. Returns (values, filled_ranges).
    """
    values = np.full(len(grid), np.nan)
    idx = np.searchsorted(grid, obs_hours)
    inside = (idx < len(grid)) & (np.take(grid, idx, mode="clip") == obs_hours)
    values[idx[inside]] = obs_vals[inside]
    dropped = int(np.count_nonzero(~inside))

    filled = []
    missing = np.isnan(values)
    if not missing.any():
        return values, filled, dropped
    span_text = lambda a, b: f"{format_hour_epoch(grid[a])}..{format_hour_epoch(grid[b])}"
    i = 0
    n = len(grid)
    while i < n:
        if not missing[i]:
            i += 1
            continue
        j = i
        while j < n and missing[j]:
            j += 1
        run = j - i
        if i == 0 or j == n:
            raise GapTooLarge(f"{label}: no data for {span_text(i, j - 1)} (span edge)")
        if run > max_gap:
            raise GapTooLarge(f"{label}: gap of {run} h at {span_text(i, j - 1)} exceeds {max_gap} h")
        left, right = values[i - 1], values[j]
        t = np.arange(1, run + 1) / (run + 1)
        values[i:j] = left + t * (right - left)
        filled.append((int(grid[i]), int(grid[j - 1])))
        i = j
    return values, filled, dropped


def _fill_daily(needed: np.ndarray, obs_days: np.ndarray, obs_vals: np.ndarray, label: str):
    """Forward-fill daily values over `needed`; a leading gap back-fills."""
    if len(obs_days) == 0:
        raise SchemaMismatch(f"{label}: no observations")
    pos = np.searchsorted(obs_days, needed, side="right") - 1
    filled = int(np.count_nonzero((pos < 0) | (np.take(obs_days, pos, mode="clip") != needed)))
    pos = np.clip(pos, 0, len(obs_days) - 1)
    return obs_vals[pos], filled


@dataclass
class AlignmentStats:
    load_gaps_filled: list = field(default_factory=list)
    weather_gaps_filled: int = 0
    mobility_days_filled: int = 0
    rows_dropped: int = 0


def align_hourly(series: RegionSeries, span: DateSpan | None = None,
                 stats: AlignmentStats | None = None) -> RegionSeries:
    """Return `series` on a complete hourly grid with full mobility coverage.

    Load/weather gaps of at most MAX_LOAD_GAP_HOURS are linearly interpolated;
    longer gaps raise GapTooLarge. Daily mobility is forward-filled (leading
    gaps back-filled) to cover every local day touched by the grid; each daily
    value then applies to all of that local day's hours (23 or 25 on DST days).
    Idempotent: aligning an aligned series returns an equal series.
    """
    stats = stats if stats is not None else AlignmentStats()
    if span is None:
        if series.n_hours == 0:
            raise SchemaMismatch(f"{series.region_id}: empty series")
        grid = np.arange(series.hours[0], series.hours[-1] + 1, dtype=np.int64)
    else:
        grid = np.arange(span.first_hour, span.last_hour + 1, dtype=np.int64)

    label = f"{series.region_id}/load"
    load, filled, dropped = _fill_channel(grid, series.hours, series.load, label, MAX_LOAD_GAP_HOURS)
    stats.load_gaps_filled.extend(filled)
    stats.rows_dropped += dropped
    if np.any(load <= 0):
        bad = int(grid[np.argmax(load <= 0)])
        raise SchemaMismatch(f"{series.region_id}: non-positive load_mw at {format_hour_epoch(bad)}")

    weather = np.empty((len(grid), len(series.weather_names)))
    for c, name in enumerate(series.weather_names):
        col, filled, _ = _fill_channel(grid, series.hours, series.weather[:, c],
                                       f"{series.region_id}/{name}", MAX_LOAD_GAP_HOURS)
        weather[:, c] = col
        stats.weather_gaps_filled += len(filled)

    # local days covered by the grid, for mobility coverage
    tz = series.tzinfo
    first_day = date_to_day_epoch(from_hour_epoch(grid[0]).astimezone(tz).date())
    last_day = date_to_day_epoch(from_hour_epoch(grid[-1]).astimezone(tz).date())
    needed = np.arange(first_day, last_day + 1, dtype=np.int64)
    if series.mobility_names:
        mob = np.empty((len(needed), len(series.mobility_names)))
        for c, name in enumerate(series.mobility_names):
            col, nfill = _fill_daily(needed, series.mobility_days, series.mobility[:, c],
                                     f"{series.region_id}/{name}")
            mob[:, c] = col
            stats.mobility_days_filled += nfill
    else:
        mob = np.empty((0, 0))
        needed = np.empty(0, dtype=np.int64)

    return RegionSeries(
        region_id=series.region_id,
        timezone=series.timezone,
        hours=grid,
        load=load,
        weather=weather,
        weather_names=series.weather_names,
        mobility_days=needed,
        mobility=mob,
        mobility_names=series.mobility_names,
        holidays=series.holidays,
    )


# ---------------------------------------------------------------------------
# CSV reading


def _read_rows(path: Path, header: tuple, label: str) -> list:
    if not path.exists():
        raise MissingFile(f"{label}: {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            got = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise SchemaMismatch(f"{label}: {path} is empty") from None
        if got != header:
            for want, have in zip(header, got + ("<missing>",) * len(header)):
                if want != have:
                    raise SchemaMismatch(
                        f"{label}: expected column '{want}', found '{have}' in {path.name}")
            raise SchemaMismatch(f"{label}: unexpected extra columns in {path.name}")
        return [row for row in reader if row]


def _parse_float(text: str, column: str, label: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise SchemaMismatch(f"{label}: column '{column}' has non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise SchemaMismatch(f"{label}: column '{column}' has non-finite value {text!r}")
    return value


def _parse_hour(text: str, label: str) -> int:
    try:
        return to_hour_epoch(parse_utc_timestamp(text))
    except (ValueError, ConfigError):
        raise SchemaMismatch(f"{label}: column 'timestamp_utc' has bad value {text!r}") from None


def _parse_date(text: str, column: str, label: str) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise SchemaMismatch(f"{label}: column '{column}' has bad value {text!r}") from None


def _read_hourly_table(path: Path, header: tuple, label: str):
    rows = _read_rows(path, header, label)
    hours = np.empty(len(rows), dtype=np.int64)
    vals = np.empty((len(rows), len(header) - 1))
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaMismatch(f"{label}: row {r + 2} has {len(row)} fields, expected {len(header)}")
        hours[r] = _parse_hour(row[0], label)
        for c, column in enumerate(header[1:]):
            vals[r, c] = _parse_float(row[c + 1], column, label)
    order = np.argsort(hours, kind="stable")
    hours, vals = hours[order], vals[order]
    if len(hours) > 1 and np.any(np.diff(hours) == 0):
        dup = int(hours[np.argmax(np.diff(hours) == 0)])
        raise SchemaMismatch(f"{label}: duplicate timestamp {format_hour_epoch(dup)}")
    return hours, vals


def _read_mobility_file(path: Path, label: str):
    rows = _read_rows(path, MOBILITY_HEADER, label)
    table: dict = {}
    for r, row in enumerate(rows):
        if len(row) != 3:
            raise SchemaMismatch(f"{label}: row {r + 2} has {len(row)} fields, expected 3")
        day = date_to_day_epoch(_parse_date(row[0], "date", label))
        name = row[1].strip()
        if not name:
            raise SchemaMismatch(f"{label}: empty index_name in row {r + 2}")
        value = _parse_float(row[2], "value_pct", label)
        table.setdefault(name, {})[day] = value
    return {name: dict(sorted(days.items())) for name, days in sorted(table.items())}


# ---------------------------------------------------------------------------
# Manifest


@dataclass
class RegionEntry:
    region_id: str
    timezone: str
    load_path: Path
    weather_paths: list
    mobility_paths: list
    holidays_path: Path | None


@dataclass
class DatasetManifest:
    span: DateSpan
    train: DateSpan
    test: DateSpan
    regions: list
    nn_orig_train: DateSpan | None = None
    mtl_groups: list = field(default_factory=list)
    path: Path | None = None

    def __post_init__(self):
        for name, sub in (("train", self.train), ("test", self.test)):
            if not self.span.contains(sub):
                raise ConfigError(f"{name} span {sub} outside dataset span {self.span}")
        if self.test.start <= self.train.end:
            raise ConfigError("test start must be strictly after train end")
        if self.nn_orig_train is not None and not self.span.contains(self.nn_orig_train):
            raise ConfigError("nn_orig_train span outside dataset span")
        ids = [r.region_id for r in self.regions]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate region_id in manifest")
        for group in self.mtl_groups:
            unknown = set(group) - set(ids)
            if unknown:
                raise ConfigError(f"mtl_groups references unknown regions {sorted(unknown)}")

    @property
    def region_ids(self) -> list:
        return [r.region_id for r in self.regions]

    def nn_orig_span(self) -> DateSpan:
        if self.nn_orig_train is not None:
            return self.nn_orig_train
        return DateSpan(self.span.start, self.train.start - timedelta(days=1))


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"manifest {path} does not exist")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path}: invalid JSON ({exc})") from exc
    check_keys(obj, {"span", "train", "test", "nn_orig_train", "mtl_groups", "regions"},
               {"span", "train", "test", "regions"}, f"manifest {path.name}")
    base = path.parent
    regions = []
    if not isinstance(obj["regions"], list) or not obj["regions"]:
        raise ConfigError(f"manifest {path.name}: no regions")
    for entry in obj["regions"]:
        check_keys(entry, {"region_id", "timezone", "load", "weather", "mobility", "holidays"},
                   {"region_id", "timezone", "load", "weather"}, "manifest region entry")
        as_list = lambda v: [v] if isinstance(v, str) else list(v)
        regions.append(RegionEntry(
            region_id=entry["region_id"],
            timezone=entry["timezone"],
            load_path=base / entry["load"],
            weather_paths=[base / p for p in as_list(entry["weather"])],
            mobility_paths=[base / p for p in as_list(entry.get("mobility", []))],
            holidays_path=(base / entry["holidays"]) if "holidays" in entry else None,
        ))
    return DatasetManifest(
        span=DateSpan.from_json(obj["span"], "span"),
        train=DateSpan.from_json(obj["train"], "train"),
        test=DateSpan.from_json(obj["test"], "test"),
        nn_orig_train=(DateSpan.from_json(obj["nn_orig_train"], "nn_orig_train")
                       if "nn_orig_train" in obj else None),
        mtl_groups=[list(g) for g in obj.get("mtl_groups", [])],
        regions=regions,
        path=path,
    )


# ---------------------------------------------------------------------------
# Ingestion


def ingest_region(entry: RegionEntry, span: DateSpan,
                  stats: AlignmentStats | None = None) -> RegionSeries:
    """Read one region's CSVs and return an aligned RegionSeries over `span`."""
    label = entry.region_id
    load_hours, load_vals = _read_hourly_table(entry.load_path, LOAD_HEADER, f"{label}/load")

    weather_blocks, weather_names = [], []
    prefix_weather = len(entry.weather_paths) > 1
    for i, wpath in enumerate(entry.weather_paths):
        weather_blocks.append(_read_hourly_table(wpath, WEATHER_HEADER, f"{label}/weather[{i}]"))
        for name in WEATHER_CHANNELS:
            weather_names.append(f"w{i}:{name}" if prefix_weather else name)

    mobility_names, mobility_cols = [], []
    prefix_mob = len(entry.mobility_paths) > 1
    for i, mpath in enumerate(entry.mobility_paths):
        table = _read_mobility_file(mpath, f"{label}/mobility[{i}]")
        for name, series_map in table.items():
            mobility_names.append(f"m{i}:{name}" if prefix_mob else name)
            mobility_cols.append(series_map)

    holidays = set()
    if entry.holidays_path is not None:
        for r, row in enumerate(_read_rows(entry.holidays_path, HOLIDAY_HEADER, f"{label}/holidays")):
            holidays.add(_parse_date(row[0], "date", f"{label}/holidays"))

    # assemble a possibly-gapped series, then align onto the span grid
    grid = np.arange(span.first_hour, span.last_hour + 1, dtype=np.int64)
    stats = stats if stats is not None else AlignmentStats()
    load, filled, dropped = _fill_channel(grid, load_hours, load_vals[:, 0],
                                          f"{label}/load_mw", MAX_LOAD_GAP_HOURS)
    stats.load_gaps_filled.extend(filled)
    stats.rows_dropped += dropped
    if np.any(load <= 0):
        bad = int(grid[np.argmax(load <= 0)])
        raise SchemaMismatch(f"{label}: non-positive load_mw at {format_hour_epoch(bad)}")

    weather = np.empty((len(grid), len(weather_names)))
    col = 0
    for w_hours, w_vals in weather_blocks:
        for c in range(len(WEATHER_CHANNELS)):
            vals, wf, _ = _fill_channel(grid, w_hours, w_vals[:, c],
                                        f"{label}/{weather_names[col]}", MAX_LOAD_GAP_HOURS)
            weather[:, col] = vals
            stats.weather_gaps_filled += len(wf)
            col += 1

    tz = ZoneInfo(entry.timezone)
    first_day = date_to_day_epoch(from_hour_epoch(grid[0]).astimezone(tz).date())
    last_day = date_to_day_epoch(from_hour_epoch(grid[-1]).astimezone(tz).date())
    needed = np.arange(first_day, last_day + 1, dtype=np.int64)
    if mobility_cols:
        mobility = np.empty((len(needed), len(mobility_cols)))
        for c, series_map in enumerate(mobility_cols):
            obs_days = np.fromiter(series_map.keys(), dtype=np.int64)
            obs_vals = np.fromiter(series_map.values(), dtype=np.float64)
            mobility[:, c], nfill = _fill_daily(needed, obs_days, obs_vals,
                                                f"{label}/{mobility_names[c]}")
            stats.mobility_days_filled += nfill
    else:
        mobility = np.empty((0, 0))
        needed = np.empty(0, dtype=np.int64)

    return RegionSeries(
        region_id=entry.region_id,
        timezone=entry.timezone,
        hours=grid,
        load=load,
        weather=weather,
        weather_names=tuple(weather_names),
        mobility_days=needed,
        mobility=mobility,
        mobility_names=tuple(mobility_names),
        holidays=frozenset(holidays),
    )


def ingest_all(manifest: DatasetManifest):
    """Ingest every region; returns ({region_id: RegionSeries}, {region_id: stats})."""
    out, stats = {}, {}
    for entry in manifest.regions:
        st = AlignmentStats()
        out[entry.region_id] = ingest_region(entry, manifest.span, st)
        stats[entry.region_id] = st
    return out, stats


# ---------------------------------------------------------------------------
# CSV writing


def write_region_csvs(series: RegionSeries, directory, comment: str | None = None) -> dict:
    """Write the documented per-region CSVs; returns a manifest region entry.

    Only the standard single-station weather layout (4 channels) is writable;
    multi-city concatenations are ingest-only.
    """
    if len(series.weather_names) != len(WEATHER_CHANNELS):
        raise ConfigError(
            f"{series.region_id}: CSV export requires exactly {len(WEATHER_CHANNELS)} weather channels")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def _open(name):
        fh = open(directory / name, "w", newline="", encoding="utf-8")
        if comment:
            fh.write(f"# {comment}\n")
        return fh

    with _open("load.csv") as fh:
        w = csv.writer(fh)
        w.writerow(LOAD_HEADER)
        for h, value in zip(series.hours, series.load):
            w.writerow([format_hour_epoch(h), format_float(value)])

    with _open("weather.csv") as fh:
        w = csv.writer(fh)
        w.writerow(WEATHER_HEADER)
        for i, h in enumerate(series.hours):
            w.writerow([format_hour_epoch(h)] + [format_float(v) for v in series.weather[i]])

    with _open("mobility.csv") as fh:
        w = csv.writer(fh)
        w.writerow(MOBILITY_HEADER)
        for i, d in enumerate(series.mobility_days):
            for c, name in enumerate(series.mobility_names):
                w.writerow([day_epoch_to_date(d).isoformat(), name,
                            format_float(series.mobility[i, c])])

    with _open("holidays.csv") as fh:
        w = csv.writer(fh)
        w.writerow(HOLIDAY_HEADER)
        for d in sorted(series.holidays):
            w.writerow([d.isoformat()])

    return {
        "region_id": series.region_id,
        "timezone": series.timezone,
        "load": f"{directory.name}/load.csv",
        "weather": [f"{directory.name}/weather.csv"],
        "mobility": [f"{directory.name}/mobility.csv"],
        "holidays": f"{directory.name}/holidays.csv",
    }


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class ShockSchedule:
    """Mobility collapse: instant drop at start_day, linear recovery after."""

    start_day: int
    depth: float
    recovery_slope: float = 0.0   # percentage points per day back toward baseline


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic multi-region fixture with known ground truth."""

    n_regions: int = 4
    days: int = 120
    seed: int = 0
    start: date = date(2018, 7, 1)
    shock: ShockSchedule = ShockSchedule(start_day=90, depth=0.35, recovery_slope=0.8)
    shock_jitter: float = 0.0          # relative spread of per-region shock params
    noise_std: float = 0.01            # additive noise, fraction of mean load
    mobility_weekly_amplitude: float = 6.0
    mobility_noise: float = 1.0
    mobility_sensitivity: float = 0.45
    trunk_weights: tuple = (0.5, 0.3, 0.2)

    def __post_init__(self):
        if self.n_regions < 1:
            raise InvalidSpec("n_regions must be >= 1")
        if self.days < 14:
            raise InvalidSpec("days must be >= 14")
        if self.noise_std < 0:
            raise InvalidSpec("noise_std must be >= 0")
        if not 0.0 <= self.shock.depth <= 1.0:
            raise InvalidSpec("shock depth must lie in [0, 1]")
        if not 0 <= self.shock.start_day:
            raise InvalidSpec("shock start_day must be >= 0")


MOBILITY_INDEX_NAMES = ("driving", "transit", "workplaces")
_SYNTH_HOLIDAYS = ((1, 1), (7, 4), (12, 25))
_HEAD_SCALES = (1000.0, 1800.0, 2600.0, 3400.0, 1400.0, 2200.0, 3000.0, 3800.0)
_HEAD_OFFSETS = (60.0, 90.0, 120.0, 150.0, 75.0, 105.0, 135.0, 165.0)


@dataclass
class SyntheticTruth:
    """Noiseless loads and per-region shock parameters behind a synthetic run."""

    noiseless: dict
    shocks: dict
    spec: SyntheticSpec

    def noiseless_load(self, region_id: str) -> np.ndarray:
        return self.noiseless[region_id]


def _region_shock(spec: SyntheticSpec, r: int) -> ShockSchedule:
    if r == 0 or spec.shock_jitter == 0.0:
        return spec.shock
    rng = np.random.default_rng([spec.seed, 811, r])
    u = rng.uniform(-1.0, 1.0, size=3)
    depth = float(np.clip(spec.shock.depth * (1 + spec.shock_jitter * u[0]), 0.02, 0.95))
    slope = float(max(0.0, spec.shock.recovery_slope * (1 + spec.shock_jitter * u[1])))
    start = int(spec.shock.start_day + round(4 * spec.shock_jitter * u[2]))
    return ShockSchedule(start_day=max(1, start), depth=depth, recovery_slope=slope)


def _hour_shape() -> np.ndarray:
    h = np.arange(24)
    return (1.0 + 0.16 * np.sin(2 * np.pi * (h - 9.5) / 24.0)
            + 0.10 * np.sin(4 * np.pi * (h - 7.0) / 24.0))


def _shared_map(weather: np.ndarray, is_weekend: np.ndarray, is_holiday: np.ndarray,
                hour_of_day: np.ndarray, mobility_hourly: np.ndarray,
                spec: SyntheticSpec) -> np.ndarray:
    """The region-independent load map g(weather, calendar, mobility), O(1) scale."""
    w = np.asarray(spec.trunk_weights, dtype=np.float64)
    w = w / w.sum()
    mob_eff = mobility_hourly @ w / 100.0
    m_factor = (1.0 - spec.mobility_sensitivity) + spec.mobility_sensitivity * mob_eff
    temp = weather[:, 0]
    cloud = weather[:, 2]
    w_factor = 1.0 + 0.0018 * (temp - 18.0) ** 2 + 0.0004 * (cloud - 50.0) / 50.0
    c_factor = np.where(is_holiday, 0.86, np.where(is_weekend, 0.92, 1.0))
    return _hour_shape()[hour_of_day] * w_factor * c_factor * m_factor


def generate_synthetic(spec: SyntheticSpec):
    """Create n_regions aligned RegionSeries plus their ground truth.

    Every region obeys load = g_shared(weather, calendar, mobility) scaled by a
    per-region affine map, plus seeded Gaussian noise, so cross-region structure
    is shared by construction. Pure function of the spec (byte-stable outputs).
    """
    n_hours = spec.days * HOURS_PER_DAY
    first_hour = date_to_day_epoch(spec.start) * HOURS_PER_DAY
    hours = np.arange(first_hour, first_hour + n_hours, dtype=np.int64)
    day_of_run = (hours - first_hour) // HOURS_PER_DAY
    hour_of_day = (hours % HOURS_PER_DAY).astype(np.int64)
    dates = [spec.start + timedelta(days=int(d)) for d in range(spec.days)]
    weekday = np.array([d.weekday() for d in dates])
    holidays = frozenset(d for d in dates if (d.month, d.day) in _SYNTH_HOLIDAYS)
    is_weekend_day = weekday >= 5
    is_holiday_day = np.array([d in holidays for d in dates])
    day_of_year = np.array([d.timetuple().tm_yday for d in dates])

    mobility_days = np.arange(date_to_day_epoch(spec.start),
                              date_to_day_epoch(spec.start) + spec.days, dtype=np.int64)

    regions, truths, shocks = [], {}, {}
    for r in range(spec.n_regions):
        region_id = f"r{r}"
        rng = np.random.default_rng([spec.seed, 211, r])

        season = 10.0 * np.sin(2 * np.pi * (day_of_year - 100) / 365.0)
        temp = (12.0 + season[day_of_run]
                + 5.0 * np.sin(2 * np.pi * (hour_of_day - 14) / 24.0)
                + rng.normal(0.0, 1.2, n_hours))
        rain_hours = rng.random(n_hours) < 0.12
        precip = np.where(rain_hours, rng.gamma(2.0, 1.2, n_hours), 0.0)
        cloud = np.clip(52.0 + 28.0 * np.sin(2 * np.pi * (day_of_run + 7 * r) / 23.0)
                        + rng.normal(0.0, 9.0, n_hours), 0.0, 100.0)
        pressure = 1013.0 + 7.0 * np.sin(2 * np.pi * day_of_run / 31.0) + rng.normal(0.0, 1.5, n_hours)
        weather = np.column_stack([temp, precip, cloud, pressure])

        shock = _region_shock(spec, r)
        shocks[region_id] = shock
        day_idx = np.arange(spec.days)
        level = np.where(
            day_idx < shock.start_day, 100.0,
            np.minimum(100.0, 100.0 * (1.0 - shock.depth)
                       + shock.recovery_slope * (day_idx - shock.start_day)))
        weekend_dip = np.where(is_weekend_day, -spec.mobility_weekly_amplitude, 0.0)
        index_weekend = np.array([0.5, 1.0, 1.5])      # workplaces dips most on weekends
        mobility = np.empty((spec.days, len(MOBILITY_INDEX_NAMES)))
        for c in range(len(MOBILITY_INDEX_NAMES)):
            noise = rng.normal(0.0, spec.mobility_noise, spec.days) if spec.mobility_noise > 0 else 0.0
            mobility[:, c] = np.maximum(0.0, level + index_weekend[c] * weekend_dip + noise)

        g = _shared_map(weather, is_weekend_day[day_of_run], is_holiday_day[day_of_run],
                        hour_of_day, mobility[day_of_run], spec)
        scale = _HEAD_SCALES[r % len(_HEAD_SCALES)] * (1.0 + 0.05 * (r // len(_HEAD_SCALES)))
        offset = _HEAD_OFFSETS[r % len(_HEAD_OFFSETS)]
        clean = scale * g + offset
        if spec.noise_std > 0:
            noise = np.random.default_rng([spec.seed, 223, r]).normal(
                0.0, spec.noise_std * float(clean.mean()), n_hours)
        else:
            noise = np.zeros(n_hours)
        load = clean + noise
        if np.any(load <= 0):
            raise InvalidSpec("noise_std too large: generated non-positive load")

        regions.append(RegionSeries(
            region_id=region_id,
            timezone="UTC",
            hours=hours,
            load=load,
            weather=weather,
            weather_names=WEATHER_CHANNELS,
            mobility_days=mobility_days,
            mobility=mobility,
            mobility_names=MOBILITY_INDEX_NAMES,
            holidays=holidays,
        ))
        truths[region_id] = clean

    return regions, SyntheticTruth(noiseless=truths, shocks=shocks, spec=spec)
