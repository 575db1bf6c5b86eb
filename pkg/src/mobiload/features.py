"""Feature encoding: calendar one-hots, min-max normalization, sample building.

A feature vector is a fixed sequence of named segments:

    hour_onehot(24) month_onehot(12) daytype_onehot(2) holiday_onehot(2)
    weather_history(H*W)  weather_forecast(W)  mobility(M)  load_history(H+1)

One sample exists per (issue hour t, horizon k in 1..24). The calendar block
describes the target instant t+k in local time (future calendars are known at
issue time). Weather history covers the H hours ending at t, the forecast step
is the recorded weather at t+k (actuals stand in for day-ahead forecast
products). The mobility block carries the issue day's daily indices, scaled by
1/100. The load history block carries normalized loads at t-H..t. The target
is the normalized load at t+k.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .dataset import RegionSeries
from .errors import ConfigError, DegenerateChannel, DimensionMismatch, SpanTooShort
from .util import DateSpan, HOURS_PER_DAY, from_hour_epoch

HOUR_BLOCK = 24
MONTH_BLOCK = 12
DAYTYPE_BLOCK = 2
HOLIDAY_BLOCK = 2
CALENDAR_WIDTH = HOUR_BLOCK + MONTH_BLOCK + DAYTYPE_BLOCK + HOLIDAY_BLOCK
HORIZONS = tuple(range(1, 25))
MOBILITY_SCALE = 0.01


# ---------------------------------------------------------------------------
# Layout


@dataclass(frozen=True)
class FeatureLayout:
    """Ordered named segments describing one task's input vector."""

    segments: tuple                 # ((name, length), ...)
    history_hours: int
    weather_names: tuple
    mobility_names: tuple           # empty when mobility is disabled

    @property
    def width(self) -> int:
        return sum(length for _, length in self.segments)

    @property
    def with_mobility(self) -> bool:
        return len(self.mobility_names) > 0

    def segment_slice(self, name: str) -> slice:
        offset = 0
        for seg_name, length in self.segments:
            if seg_name == name:
                return slice(offset, offset + length)
            offset += length
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "segments": [[name, length] for name, length in self.segments],
            "history_hours": self.history_hours,
            "weather_names": list(self.weather_names),
            "mobility_names": list(self.mobility_names),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureLayout":
        return cls(
            segments=tuple((str(n), int(l)) for n, l in obj["segments"]),
            history_hours=int(obj["history_hours"]),
            weather_names=tuple(obj["weather_names"]),
            mobility_names=tuple(obj["mobility_names"]),
        )

    def hash(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def build_layout(weather_names, mobility_names, history_hours: int,
                 with_mobility: bool) -> FeatureLayout:
    H = int(history_hours)
    if H < 0:
        raise ConfigError("history_hours must be >= 0")
    W = len(weather_names)
    mob = tuple(mobility_names) if with_mobility else ()
    segments = [
        ("hour_onehot", HOUR_BLOCK),
        ("month_onehot", MONTH_BLOCK),
        ("daytype_onehot", DAYTYPE_BLOCK),
        ("holiday_onehot", HOLIDAY_BLOCK),
        ("weather_history", H * W),
        ("weather_forecast", W),
        ("mobility", len(mob)),
        ("load_history", H + 1),
    ]
    return FeatureLayout(
        segments=tuple(segments),
        history_hours=H,
        weather_names=tuple(weather_names),
        mobility_names=mob,
    )


# ---------------------------------------------------------------------------
# Calendar encoding


def encode_calendar(local_dt: datetime, holidays) -> np.ndarray:
    """One-hot blocks for hour, month, weekday/weekend, holiday/non-holiday."""
    out = np.zeros(CALENDAR_WIDTH)
    out[local_dt.hour] = 1.0
    out[HOUR_BLOCK + local_dt.month - 1] = 1.0
    base = HOUR_BLOCK + MONTH_BLOCK
    if local_dt.weekday() >= 5:
        out[base + 1] = 1.0
    else:
        out[base] = 1.0
    base += DAYTYPE_BLOCK
    if local_dt.date() in holidays:
        out[base] = 1.0
    else:
        out[base + 1] = 1.0
    return out


def decode_calendar(block: np.ndarray) -> dict:
    """Inverse of encode_calendar (argmax per block)."""
    hour = int(np.argmax(block[:HOUR_BLOCK]))
    month = int(np.argmax(block[HOUR_BLOCK:HOUR_BLOCK + MONTH_BLOCK])) + 1
    base = HOUR_BLOCK + MONTH_BLOCK
    weekend = bool(np.argmax(block[base:base + DAYTYPE_BLOCK]))
    holiday = not bool(np.argmax(block[base + DAYTYPE_BLOCK:base + DAYTYPE_BLOCK + HOLIDAY_BLOCK]))
    return {"hour": hour, "month": month, "weekend": weekend, "holiday": holiday}


def calendar_matrix(series: RegionSeries) -> np.ndarray:
    """Calendar one-hots for every grid hour, evaluated in the local zone."""
    tz = series.tzinfo
    out = np.zeros((series.n_hours, CALENDAR_WIDTH))
    for i, h in enumerate(series.hours):
        out[i] = encode_calendar(from_hour_epoch(h).astimezone(tz), series.holidays)
    return out


# ---------------------------------------------------------------------------
# Normalization


@dataclass(frozen=True)
class NormalizationState:
    """Train-span min-max stats; mobility is fixed-scaled by 1/100."""

    load_min: float
    load_max: float
    weather_min: tuple
    weather_max: tuple
    weather_names: tuple

    def normalize_load(self, values: np.ndarray) -> np.ndarray:
        return (values - self.load_min) / (self.load_max - self.load_min)

    def denormalize_load(self, values: np.ndarray) -> np.ndarray:
        return values * (self.load_max - self.load_min) + self.load_min

    def normalize_weather(self, block: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.weather_min)
        hi = np.asarray(self.weather_max)
        return (block - lo) / (hi - lo)

    def to_json(self) -> dict:
        return {
            "load_min": self.load_min,
            "load_max": self.load_max,
            "weather_min": list(self.weather_min),
            "weather_max": list(self.weather_max),
            "weather_names": list(self.weather_names),
            "mobility_scale": MOBILITY_SCALE,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NormalizationState":
        return cls(
            load_min=float(obj["load_min"]),
            load_max=float(obj["load_max"]),
            weather_min=tuple(obj["weather_min"]),
            weather_max=tuple(obj["weather_max"]),
            weather_names=tuple(obj["weather_names"]),
        )


def fit_normalizer(series: RegionSeries, train_span: DateSpan) -> NormalizationState:
    """Min-max over the training span only. Values outside the span later map
    outside [0, 1]; they are never clipped."""
    first, last = train_span.first_hour, train_span.last_hour
    if first < series.hours[0] or last > series.hours[-1]:
        raise SpanTooShort(f"train span {train_span} not inside series span")
    lo = series.hour_index(first)
    hi = series.hour_index(last) + 1
    load = series.load[lo:hi]
    load_min, load_max = float(load.min()), float(load.max())
    if load_max <= load_min:
        raise DegenerateChannel("load: max equals min over train span")
    wmin, wmax = [], []
    for c, name in enumerate(series.weather_names):
        col = series.weather[lo:hi, c]
        cmin, cmax = float(col.min()), float(col.max())
        if cmax <= cmin:
            raise DegenerateChannel(f"{name}: max equals min over train span")
        wmin.append(cmin)
        wmax.append(cmax)
    return NormalizationState(
        load_min=load_min,
        load_max=load_max,
        weather_min=tuple(wmin),
        weather_max=tuple(wmax),
        weather_names=series.weather_names,
    )


# ---------------------------------------------------------------------------
# Sample building


@dataclass(eq=False)
class SampleSet:
    """Encoded (feature vector, normalized target) pairs for one task."""

    task_id: str
    layout: FeatureLayout
    inputs: np.ndarray        # float64 (n, width)
    targets: np.ndarray       # float64 (n,)
    issue_hours: np.ndarray   # int64 (n,)
    horizons: np.ndarray      # int64 (n,), values in 1..24

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise DimensionMismatch("inputs and targets must have equal length")
        for arr in (self.inputs, self.targets, self.issue_hours, self.horizons):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def width(self) -> int:
        return self.inputs.shape[1]

    @property
    def layout_hash(self) -> str:
        return self.layout.hash()

    def target_hours(self) -> np.ndarray:
        return self.issue_hours + self.horizons


def build_samples(series: RegionSeries, norm: NormalizationState, history_hours: int,
                  with_mobility: bool, span: DateSpan,
                  issue_stride_hours: int = 1) -> SampleSet:
    """Enumerate samples for every valid (issue hour, horizon) in `span`.

    Issue hours step through the span from its first hour with the given
    stride; an issue is valid when the series provides H hours of history and
    all 24 target hours stay inside the span. Output is sorted by (t, k).
    """
    if norm.weather_names != series.weather_names:
        raise DimensionMismatch("normalizer fitted on different weather channels")
    if with_mobility and not series.mobility_names:
        raise ConfigError(f"{series.region_id}: mobility features requested but none ingested")
    if issue_stride_hours < 1:
        raise ConfigError("issue_stride_hours must be >= 1")
    if not series.is_hourly_complete():
        raise DimensionMismatch(f"{series.region_id}: series must be hourly-aligned first")
    H = int(history_hours)
    layout = build_layout(series.weather_names, series.mobility_names, H, with_mobility)

    first, last = span.first_hour, span.last_hour
    if first < series.hours[0] or last > series.hours[-1]:
        raise SpanTooShort(f"span {span} not inside series data")
    base = series.hours[0]
    candidates = np.arange(first, last + 1, issue_stride_hours, dtype=np.int64)
    ok = (candidates - H >= base) & (candidates + HORIZONS[-1] <= last)
    issues = candidates[ok] - base          # grid indices (grid is hourly complete)
    if issues.size == 0:
        raise SpanTooShort(
            f"span {span} leaves no valid issue with H={H} and 24 h of targets")

    nk = len(HORIZONS)
    issue_idx = np.repeat(issues, nk)
    k = np.tile(np.asarray(HORIZONS, dtype=np.int64), len(issues))
    tgt_idx = issue_idx + k
    n = len(issue_idx)

    cal = calendar_matrix(series)
    weather_n = norm.normalize_weather(series.weather)
    load_n = norm.normalize_load(series.load)

    blocks = [cal[tgt_idx]]
    if H > 0:
        hist_offsets = np.arange(-H + 1, 1, dtype=np.int64)
        hist_idx = issue_idx[:, None] + hist_offsets[None, :]
        blocks.append(weather_n[hist_idx].reshape(n, H * len(series.weather_names)))
    blocks.append(weather_n[tgt_idx])
    if with_mobility:
        blocks.append(series.mobility_hourly()[issue_idx] * MOBILITY_SCALE)
    lag_offsets = np.arange(-H, 1, dtype=np.int64)
    lag_idx = issue_idx[:, None] + lag_offsets[None, :]
    blocks.append(load_n[lag_idx].reshape(n, H + 1))

    inputs = np.concatenate(blocks, axis=1)
    assert inputs.shape[1] == layout.width
    return SampleSet(
        task_id=series.region_id,
        layout=layout,
        inputs=inputs,
        targets=load_n[tgt_idx],
        issue_hours=issue_idx + base,
        horizons=k,
    )
