"""Four-variant forecasting experiment: train, score, and compare.

Variants:
    NN_Orig   long pre-event history, no mobility features
    Retrain   short recent window, no mobility features
    Mobi      short recent window, mobility features on
    Mobi_MTL  Mobi plus shared-trunk co-training over a region group,
              followed by per-region head fine-tuning

Every variant is scored on the same test window: issue times are the UTC
midnights of the test span, horizons 1..24, predictions de-normalized back to
MW. Reported MAPE uses raw MW actuals with no epsilon floor and equals the
mean of |signed percentage errors| by construction.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, RegionSeries
from .errors import (
    ConfigError,
    MismatchedTestSets,
    SpanConflict,
    ZeroActual,
)
from .features import (
    FeatureLayout,
    NormalizationState,
    build_samples,
    fit_normalizer,
)
from .neuralnet import (
    ArchitectureSpec,
    NetworkParams,
    forward,
    init_params,
    params_from_json,
    params_to_json,
)
from .training import (
    MultiTaskModel,
    TrainingConfig,
    TrainingLog,
    fine_tune,
    init_multitask,
    train_multitask,
    train_single,
)
from .util import DateSpan, derive_seed, format_float, format_hour_epoch

VARIANT_KINDS = ("NN_Orig", "Retrain", "Mobi", "Mobi_MTL")
MOBILITY_VARIANTS = ("Mobi", "Mobi_MTL")
TEST_ISSUE_STRIDE = 24          # one issue per day, at UTC midnight


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Architecture, feature, and training settings for one experiment run."""

    hidden: tuple = (512, 256, 128, 64)
    activation: str = "relu"
    dropout: float = 0.2
    trunk_depth: int = 3
    history_hours: int = 24
    training: TrainingConfig = field(default_factory=TrainingConfig)
    issue_stride_hours: int = 1
    nn_orig_issue_stride_hours: int | None = None
    nn_orig_epochs: int | None = None
    seed: int = 0

    def architecture(self, input_dim: int) -> ArchitectureSpec:
        return ArchitectureSpec.standard(
            input_dim, hidden=self.hidden, activation=self.activation,
            dropout=self.dropout, trunk_depth=self.trunk_depth)

    def stride_for(self, kind: str) -> int:
        if kind == "NN_Orig" and self.nn_orig_issue_stride_hours is not None:
            return self.nn_orig_issue_stride_hours
        return self.issue_stride_hours

    def training_for(self, kind: str, label: str) -> TrainingConfig:
        cfg = self.training
        if kind == "NN_Orig" and self.nn_orig_epochs is not None:
            cfg = replace(cfg, epochs=self.nn_orig_epochs)
        return replace(cfg, seed=derive_seed(self.seed, kind, label))

    def to_json(self) -> dict:
        return {
            "hidden": list(self.hidden),
            "activation": self.activation,
            "dropout": self.dropout,
            "trunk_depth": self.trunk_depth,
            "history_hours": self.history_hours,
            "training": self.training.to_json(),
            "issue_stride_hours": self.issue_stride_hours,
            "nn_orig_issue_stride_hours": self.nn_orig_issue_stride_hours,
            "nn_orig_epochs": self.nn_orig_epochs,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class VariantSpec:
    """One variant's identity: kind, training span, mobility flag, regions."""

    kind: str
    train_span: DateSpan
    regions: tuple
    with_mobility: bool

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ConfigError(f"unknown variant kind {self.kind!r}")
        expected_mob = self.kind in MOBILITY_VARIANTS
        if self.with_mobility != expected_mob:
            raise ConfigError(f"{self.kind} must have with_mobility={expected_mob}")
        if not self.regions:
            raise ConfigError("variant needs at least one region")
        if self.kind == "Mobi_MTL" and len(self.regions) < 2:
            raise ConfigError("Mobi_MTL needs a group of at least 2 regions")


def make_variant_spec(kind: str, manifest: DatasetManifest, regions=None) -> VariantSpec:
    if regions is None:
        regions = manifest.region_ids
    span = manifest.nn_orig_span() if kind == "NN_Orig" else manifest.train
    return VariantSpec(kind=kind, train_span=span, regions=tuple(regions),
                       with_mobility=kind in MOBILITY_VARIANTS)


# ---------------------------------------------------------------------------
# Error metrics


def signed_errors(predictions, actuals) -> np.ndarray:
    """100 * (pred - actual) / actual per sample; positive = over-forecast."""
    p = np.asarray(predictions, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    if p.shape != a.shape:
        raise MismatchedTestSets(f"predictions {p.shape} vs actuals {a.shape}")
    if np.any(a <= 0):
        raise ZeroActual("actual load <= 0 is a data error")
    return 100.0 * (p - a) / a


@dataclass
class PredictionSet:
    """De-normalized test-window forecasts for one (region, variant)."""

    region: str
    variant: str
    issue_hours: np.ndarray
    horizons: np.ndarray
    target_hours: np.ndarray
    pred_mw: np.ndarray
    actual_mw: np.ndarray

    @property
    def n(self) -> int:
        return len(self.pred_mw)

    def signed_errors(self) -> np.ndarray:
        return signed_errors(self.pred_mw, self.actual_mw)

    def mape(self) -> float:
        return float(np.mean(np.abs(self.signed_errors())))


# ---------------------------------------------------------------------------
# Variant pipeline


@dataclass
class VariantResult:
    spec: VariantSpec
    config: ExperimentConfig
    layouts: dict
    normalizers: dict
    single_params: dict          # region -> NetworkParams (single-task kinds)
    mtl_model: MultiTaskModel | None
    logs: dict                   # label -> TrainingLog
    predictions: dict            # region -> PredictionSet

    def params_for(self, region: str) -> NetworkParams:
        if self.mtl_model is not None:
            return self.mtl_model.compose(region)
        return self.single_params[region]


def predict_region(params: NetworkParams, arch: ArchitectureSpec,
                   layout: FeatureLayout, norm: NormalizationState,
                   series: RegionSeries, span: DateSpan,
                   variant: str = "") -> PredictionSet:
    """Day-ahead predictions over `span` (issues at UTC midnight, k = 1..24)."""
    samples = build_samples(series, norm, layout.history_hours,
                            layout.with_mobility, span,
                            issue_stride_hours=TEST_ISSUE_STRIDE)
    if samples.layout_hash != layout.hash():
        raise ConfigError(f"{series.region_id}: feature layout hash mismatch "
                          "between checkpoint and data")
    preds = norm.denormalize_load(forward(params, arch, samples.inputs).output)
    base = series.hours[0]
    actual = series.load[samples.target_hours() - base]
    return PredictionSet(
        region=series.region_id,
        variant=variant,
        issue_hours=samples.issue_hours,
        horizons=samples.horizons,
        target_hours=samples.target_hours(),
        pred_mw=preds,
        actual_mw=actual,
    )


def run_variant(variant: VariantSpec, series_by_region: dict,
                config: ExperimentConfig, test_span: DateSpan) -> VariantResult:
    """fit normalizer -> build samples -> train -> predict the test span."""
    if variant.train_span.end >= test_span.start:
        raise SpanConflict(
            f"{variant.kind}: train span {variant.train_span} touches test span {test_span}")
    for region in variant.regions:
        if region not in series_by_region:
            raise ConfigError(f"{variant.kind}: region {region!r} not in dataset")
    if variant.with_mobility:
        for region in variant.regions:
            if not series_by_region[region].mobility_names:
                raise ConfigError(
                    f"{variant.kind}: region {region!r} has no mobility data")

    stride = config.stride_for(variant.kind)
    layouts, normalizers, train_sets = {}, {}, {}
    for region in variant.regions:
        series = series_by_region[region]
        norm = fit_normalizer(series, variant.train_span)
        data = build_samples(series, norm, config.history_hours, variant.with_mobility,
                             variant.train_span, issue_stride_hours=stride)
        layouts[region] = data.layout
        normalizers[region] = norm
        train_sets[region] = data

    logs, single_params, mtl_model = {}, {}, None
    if variant.kind == "Mobi_MTL":
        any_layout = train_sets[variant.regions[0]].layout
        arch = config.architecture(any_layout.width)
        hashes = {r: train_sets[r].layout_hash for r in variant.regions}
        mtl_model = init_multitask(arch, variant.regions, hashes,
                                   derive_seed(config.seed, variant.kind, *variant.regions))
        mtl_model, log = train_multitask(mtl_model, train_sets,
                                         config.training_for(variant.kind, "+".join(variant.regions)))
        logs["co_train"] = log
        for region in variant.regions:
            _, ft_log = fine_tune(mtl_model, region, train_sets[region],
                                  config.training_for(variant.kind, region))
            logs[f"fine_tune/{region}"] = ft_log
    else:
        for region in variant.regions:
            data = train_sets[region]
            arch = config.architecture(data.layout.width)
            params = init_params(arch, derive_seed(config.seed, variant.kind, region, "init"))
            _, log = train_single(params, arch, data,
                                  config.training_for(variant.kind, region))
            single_params[region] = params
            logs[region] = log

    predictions = {}
    for region in variant.regions:
        series = series_by_region[region]
        arch = config.architecture(layouts[region].width)
        params = mtl_model.compose(region) if mtl_model is not None else single_params[region]
        predictions[region] = predict_region(params, arch, layouts[region],
                                             normalizers[region], series, test_span,
                                             variant=variant.kind)
    return VariantResult(spec=variant, config=config, layouts=layouts,
                         normalizers=normalizers, single_params=single_params,
                         mtl_model=mtl_model, logs=logs, predictions=predictions)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class EvaluationReport:
    """Scored predictions for every (region, variant) on one test window."""

    predictions: list
    test_span: DateSpan
    runtime_s: float = 0.0

    def variants(self) -> list:
        seen = []
        for p in self.predictions:
            if p.variant not in seen:
                seen.append(p.variant)
        return seen

    def regions(self) -> list:
        seen = []
        for p in self.predictions:
            if p.region not in seen:
                seen.append(p.region)
        return seen

    def get(self, region: str, variant: str) -> PredictionSet:
        for p in self.predictions:
            if p.region == region and p.variant == variant:
                return p
        raise KeyError((region, variant))

    def mape_table(self) -> dict:
        return {(p.region, p.variant): p.mape() for p in self.predictions}

    def mean_mape(self, variant: str) -> float:
        values = [p.mape() for p in self.predictions if p.variant == variant]
        if not values:
            raise KeyError(variant)
        return float(np.mean(values))

    def summary_rows(self) -> list:
        rows = []
        for p in self.predictions:
            err = p.signed_errors()
            q = np.quantile(err, [0.05, 0.25, 0.5, 0.75, 0.95])
            rows.append({
                "region": p.region,
                "variant": p.variant,
                "test_mape": p.mape(),
                "mean_bias": float(err.mean()),
                "p05": float(q[0]), "p25": float(q[1]), "p50": float(q[2]),
                "p75": float(q[3]), "p95": float(q[4]),
                "over_share": float(np.mean(err > 0)),
            })
        return rows

    def weekly_rows(self) -> list:
        first = self.test_span.first_hour
        rows = []
        for p in self.predictions:
            weeks = (p.target_hours - first) // (24 * 7)
            for week in sorted(set(weeks.tolist())):
                sel = weeks == week
                err = signed_errors(p.pred_mw[sel], p.actual_mw[sel])
                rows.append({"region": p.region, "variant": p.variant,
                             "week": int(week), "mape": float(np.mean(np.abs(err)))})
        return rows


@dataclass
class VariantComparison:
    regions: list
    variants: list
    table: dict                  # (region, variant) -> mape
    improvement_ratio: float | None


def compare_variants(report: EvaluationReport, baseline: str = "NN_Orig",
                     improved: str = "Mobi_MTL") -> VariantComparison:
    """Per-region MAPE table plus mean(baseline)/mean(improved) across regions.

    Refuses to compare variants scored on different prediction sets.
    """
    regions = report.regions()
    variants = report.variants()
    reference = {r: report.get(r, variants[0]).target_hours for r in regions}
    for v in variants:
        for r in regions:
            p = report.get(r, v)
            if not np.array_equal(p.target_hours, reference[r]):
                raise MismatchedTestSets(
                    f"{r}/{v}: test samples differ from {variants[0]}")
    table = report.mape_table()
    ratio = None
    if baseline in variants and improved in variants:
        ratio = report.mean_mape(baseline) / report.mean_mape(improved)
    return VariantComparison(regions=regions, variants=variants, table=table,
                             improvement_ratio=ratio)


def run_experiment(manifest: DatasetManifest, series_by_region: dict,
                   config: ExperimentConfig, variants=VARIANT_KINDS):
    """Train and score the requested variants; returns (report, results)."""
    started = time.perf_counter()
    results = {}
    predictions = []
    for kind in variants:
        if kind == "Mobi_MTL":
            groups = manifest.mtl_groups or [manifest.region_ids]
            for group in groups:
                spec = make_variant_spec(kind, manifest, group)
                result = run_variant(spec, series_by_region, config, manifest.test)
                results.setdefault(kind, []).append(result)
                predictions.extend(result.predictions[r] for r in spec.regions)
        else:
            spec = make_variant_spec(kind, manifest)
            result = run_variant(spec, series_by_region, config, manifest.test)
            results.setdefault(kind, []).append(result)
            predictions.extend(result.predictions[r] for r in spec.regions)
    report = EvaluationReport(predictions=predictions, test_span=manifest.test,
                              runtime_s=time.perf_counter() - started)
    return report, results


# ---------------------------------------------------------------------------
# Checkpoint payloads (see neuralnet.save_checkpoint for the envelope)


def single_checkpoint_payload(result: VariantResult, region: str, run_meta: dict) -> dict:
    layout = result.layouts[region]
    return {
        "kind": "single",
        "variant": result.spec.kind,
        "region": region,
        "architecture": result.config.architecture(layout.width).to_json(),
        "layout": layout.to_json(),
        "layout_hash": layout.hash(),
        "normalizer": result.normalizers[region].to_json(),
        "layers": params_to_json(result.single_params[region]),
        "run": run_meta,
    }


def multitask_checkpoint_payload(result: VariantResult, run_meta: dict) -> dict:
    model = result.mtl_model
    regions = list(result.spec.regions)
    layout = result.layouts[regions[0]]
    return {
        "kind": "multitask",
        "variant": result.spec.kind,
        "regions": regions,
        "architecture": model.spec.to_json(),
        "layout": layout.to_json(),
        "layout_hash": layout.hash(),
        "normalizers": {r: result.normalizers[r].to_json() for r in regions},
        "trunk": params_to_json(model.trunk),
        "heads": {r: params_to_json(model.heads[r]) for r in regions},
        "run": run_meta,
    }


def model_from_checkpoint(payload: dict, task: str | None = None):
    """Rebuild (params, arch, layout, norm) from a checkpoint payload.

    For multitask checkpoints `task` selects the head (trunk + that head)."""
    arch = ArchitectureSpec.from_json(payload["architecture"])
    layout = FeatureLayout.from_json(payload["layout"])
    if payload["kind"] == "single":
        params = params_from_json(payload["layers"])
        norm = NormalizationState.from_json(payload["normalizer"])
        return params, arch, layout, norm
    if payload["kind"] == "multitask":
        if task is None:
            raise ConfigError("multitask checkpoint needs a task id to compose")
        if task not in payload["heads"]:
            raise ConfigError(f"checkpoint has no head for task {task!r}")
        trunk = params_from_json(payload["trunk"])
        head = params_from_json(payload["heads"][task])
        params = NetworkParams(trunk.weights + head.weights, trunk.biases + head.biases)
        norm = NormalizationState.from_json(payload["normalizers"][task])
        return params, arch, layout, norm
    raise ConfigError(f"unknown checkpoint kind {payload['kind']!r}")


# ---------------------------------------------------------------------------
# Artifact writers


def _comment_lines(meta: dict) -> list:
    return [f"# {key}={value}" for key, value in meta.items()]


def write_report_csv(report: EvaluationReport, path, meta: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in _comment_lines(meta or {}):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(["region", "variant", "test_mape"])
        for p in report.predictions:
            w.writerow([p.region, p.variant, format_float(p.mape())])


def write_predictions_csv(report: EvaluationReport, path, meta: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in _comment_lines(meta or {}):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(["timestamp_utc", "region", "variant", "pred_mw", "actual_mw",
                    "signed_err_pct"])
        for p in report.predictions:
            err = p.signed_errors()
            for i in range(p.n):
                w.writerow([format_hour_epoch(p.target_hours[i]), p.region, p.variant,
                            format_float(p.pred_mw[i]), format_float(p.actual_mw[i]),
                            format_float(err[i])])


def write_weekly_csv(report: EvaluationReport, path, meta: dict | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in _comment_lines(meta or {}):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(["region", "variant", "week", "mape"])
        for row in report.weekly_rows():
            w.writerow([row["region"], row["variant"], row["week"],
                        format_float(row["mape"])])


def format_summary_table(report: EvaluationReport) -> str:
    """Aligned text table: one region per row, one variant per column."""
    regions = report.regions()
    variants = report.variants()
    table = report.mape_table()
    header = ["region"] + list(variants)
    rows = [[r] + [f"{table[(r, v)]:.2f}" for v in variants] for r in regions]
    widths = [max(len(str(cell)) for cell in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths))
             for row in [header] + rows]
    comparison = compare_variants(report)
    if comparison.improvement_ratio is not None:
        lines.append("")
        lines.append(f"improvement ratio mean(NN_Orig)/mean(Mobi_MTL): "
                     f"{comparison.improvement_ratio:.2f}")
    return "\n".join(lines)
