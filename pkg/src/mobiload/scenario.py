"""What-if load projection under counterfactual mobility levels.

A scenario fixes per-index mobility means (percent of baseline) with Gaussian
uncertainty, borrows weather and lagged load from a historical template span
of equal length, and keeps the real target dates' calendar features. The point
trajectory evaluates the model at the mobility means; uncertainty bands are
empirical quantiles over seeded Monte Carlo runs where each day's mobility is
drawn independently per index (clamped at 0) and replicated across that day's
hours. Outputs are de-normalized to MW.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import RegionSeries
from .errors import (
    InvalidSpec,
    ModelWithoutMobility,
    SpanMismatch,
    WindowTooShort,
)
from .features import (
    MOBILITY_SCALE,
    FeatureLayout,
    NormalizationState,
    build_samples,
    encode_calendar,
)
from .neuralnet import ArchitectureSpec, NetworkParams, forward
from .util import (
    DateSpan,
    date_to_day_epoch,
    format_float,
    format_hour_epoch,
    from_hour_epoch,
)


def estimate_mobility_stats(series: RegionSeries, window: DateSpan) -> dict:
    """Per-index sample mean and std (ddof=1) of daily values over `window`."""
    if window.n_days < 7:
        raise WindowTooShort(f"window {window} shorter than 7 days")
    lo = date_to_day_epoch(window.start)
    hi = date_to_day_epoch(window.end)
    sel = (series.mobility_days >= lo) & (series.mobility_days <= hi)
    if int(sel.sum()) != window.n_days:
        raise WindowTooShort(f"window {window} not fully covered by mobility data")
    out = {}
    for c, name in enumerate(series.mobility_names):
        values = series.mobility[sel, c]
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        out[name] = (float(values.mean()), std)
    return out


@dataclass(frozen=True)
class ScenarioSpec:
    """Counterfactual mobility levels plus the historical template to project on."""

    target_span: DateSpan
    template_span: DateSpan
    mobility_mean: dict          # index name -> percent of baseline
    mobility_std: dict           # index name -> percent points
    sample_count: int = 200
    seed: int = 0
    confidence: float = 0.95

    def __post_init__(self):
        if self.target_span.n_days != self.template_span.n_days:
            raise SpanMismatch(
                f"target span has {self.target_span.n_days} days but template has "
                f"{self.template_span.n_days}")
        if self.sample_count < 1:
            raise InvalidSpec("sample_count must be >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise InvalidSpec("confidence must lie in (0, 1)")
        for name, value in self.mobility_std.items():
            if value < 0:
                raise InvalidSpec(f"mobility_std[{name!r}] must be >= 0")

    def to_json(self) -> dict:
        return {
            "target_span": self.target_span.to_json(),
            "template_span": self.template_span.to_json(),
            "mobility_mean": dict(self.mobility_mean),
            "mobility_std": dict(self.mobility_std),
            "sample_count": self.sample_count,
            "seed": self.seed,
            "confidence": self.confidence,
        }


@dataclass
class Projection:
    """Hourly point forecast with lower/upper confidence band, in MW."""

    target_hours: np.ndarray
    point_mw: np.ndarray
    lo_mw: np.ndarray
    hi_mw: np.ndarray
    scenario: ScenarioSpec

    @property
    def n(self) -> int:
        return len(self.point_mw)

    def band_width(self) -> float:
        return float(np.mean(self.hi_mw - self.lo_mw))


def _mobility_vector(layout: FeatureLayout, table: dict, label: str) -> np.ndarray:
    missing = [n for n in layout.mobility_names if n not in table]
    if missing:
        raise InvalidSpec(f"scenario {label} missing mobility index(es) {missing}")
    return np.array([float(table[n]) for n in layout.mobility_names])


def project(scenario: ScenarioSpec, params: NetworkParams, arch: ArchitectureSpec,
            layout: FeatureLayout, norm: NormalizationState,
            series: RegionSeries) -> Projection:
    """Project loads for the scenario's target span; deterministic given seed.

    Inputs reuse the sample builder on the template span (weather and load
    history come from those historical dates), then the calendar block is
    rewritten for the true target dates and the mobility block for the
    scenario. Day d of the template maps to day d of the target span.
    """
    if not layout.with_mobility:
        raise ModelWithoutMobility("checkpoint has no mobility segment")
    if not series.mobility_names:
        raise ModelWithoutMobility(f"{series.region_id} has no mobility data")

    template = build_samples(series, norm, layout.history_hours, True,
                             scenario.template_span, issue_stride_hours=24)
    if template.layout_hash != layout.hash():
        raise SpanMismatch(f"{series.region_id}: template features do not match "
                           "the checkpoint layout")

    # day offset of each sample's issue within the template span
    day_of_sample = (template.issue_hours - scenario.template_span.first_hour) // 24
    shift_days = (date_to_day_epoch(scenario.target_span.start)
                  - date_to_day_epoch(scenario.template_span.start))
    target_hours = template.target_hours() + 24 * shift_days

    inputs = np.array(template.inputs)          # writable copy
    cal_start = layout.segment_slice("hour_onehot").start   # calendar sits first
    cal_width = layout.segment_slice("holiday_onehot").stop
    tz = series.tzinfo
    cal_cache: dict = {}
    cal_block = np.empty((len(target_hours), cal_width))
    for i, h in enumerate(target_hours):
        h = int(h)
        if h not in cal_cache:
            cal_cache[h] = encode_calendar(from_hour_epoch(h).astimezone(tz),
                                           series.holidays)
        cal_block[i] = cal_cache[h]
    inputs[:, cal_start:cal_width] = cal_block

    mob_slice = layout.segment_slice("mobility")
    mean_vec = _mobility_vector(layout, scenario.mobility_mean, "mobility_mean")
    std_vec = _mobility_vector(layout, scenario.mobility_std, "mobility_std")

    inputs[:, mob_slice] = mean_vec * MOBILITY_SCALE
    point = norm.denormalize_load(forward(params, arch, inputs).output)

    if np.all(std_vec == 0.0):
        lo = point.copy()
        hi = point.copy()
    else:
        n_days = scenario.target_span.n_days
        rng = np.random.default_rng([scenario.seed, 4099])
        trajectories = np.empty((scenario.sample_count, len(point)))
        for s in range(scenario.sample_count):
            draws = np.maximum(0.0, rng.normal(mean_vec, std_vec, size=(n_days, len(mean_vec))))
            inputs[:, mob_slice] = draws[day_of_sample] * MOBILITY_SCALE
            trajectories[s] = norm.denormalize_load(forward(params, arch, inputs).output)
        alpha = (1.0 - scenario.confidence) / 2.0
        lo = np.quantile(trajectories, alpha, axis=0)
        hi = np.quantile(trajectories, 1.0 - alpha, axis=0)

    return Projection(target_hours=target_hours, point_mw=point, lo_mw=lo,
                      hi_mw=hi, scenario=scenario)


def write_projection_csv(projection: Projection, path, meta: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}={value}\n")
        w = csv.writer(fh)
        w.writerow(["timestamp", "point_mw", "lo_mw", "hi_mw"])
        for i in range(projection.n):
            w.writerow([format_hour_epoch(projection.target_hours[i]),
                        format_float(projection.point_mw[i]),
                        format_float(projection.lo_mw[i]),
                        format_float(projection.hi_mw[i])])
