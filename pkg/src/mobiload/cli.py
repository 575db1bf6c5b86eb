"""Command-line surface for the batch forecasting pipeline.

Subcommands compose through files only: `synth` writes a dataset plus a
manifest, `ingest` validates a manifest, `train` writes checkpoints and
training logs, `evaluate` scores checkpoints into report CSVs (and figures),
`project` renders scenario projections, `selfcheck` runs internal checks.

Exit status: 0 success, 1 user/data error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from datetime import timedelta
from pathlib import Path

from . import __version__
from .dataset import (
    DatasetManifest,
    ShockSchedule,
    SyntheticSpec,
    generate_synthetic,
    ingest_all,
    load_manifest,
    write_region_csvs,
)
from .errors import ConfigError, MissingCheckpoint, MissingFile, MobiloadError
from .evaluation import (
    EvaluationReport,
    ExperimentConfig,
    VARIANT_KINDS,
    compare_variants,
    format_summary_table,
    make_variant_spec,
    model_from_checkpoint,
    multitask_checkpoint_payload,
    predict_region,
    run_variant,
    single_checkpoint_payload,
    write_predictions_csv,
    write_report_csv,
    write_weekly_csv,
)
from .neuralnet import load_checkpoint, save_checkpoint
from .scenario import ScenarioSpec, estimate_mobility_stats, project, write_projection_csv
from .training import TrainingConfig
from .util import DateSpan, check_keys, date_to_day_epoch, format_float, format_hour_epoch


def _read_json(path, label: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"{label} {path} does not exist")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{label} {path}: invalid JSON ({exc})") from exc


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Run configuration


def parse_run_config(path: Path, seed_override: int | None):
    """Read the train/evaluate config file; returns (manifest, variants, config)."""
    obj = _read_json(path, "config")
    check_keys(obj, {"manifest", "seed", "variants", "architecture", "features",
                     "training", "sampling", "nn_orig"},
               {"manifest"}, f"config {path.name}")
    seed = int(obj.get("seed", 0)) if seed_override is None else seed_override

    arch = obj.get("architecture", {})
    check_keys(arch, {"hidden", "activation", "dropout", "trunk_depth"}, set(),
               "config.architecture")
    feats = obj.get("features", {})
    check_keys(feats, {"history_hours"}, set(), "config.features")
    tr = obj.get("training", {})
    check_keys(tr, {"batch_size", "epochs", "learning_rate", "optimizer",
                    "mape_epsilon", "fine_tune_epochs", "fine_tune_learning_rate"},
               set(), "config.training")
    sampling = obj.get("sampling", {})
    check_keys(sampling, {"issue_stride_hours"}, set(), "config.sampling")
    nn_orig = obj.get("nn_orig", {})
    check_keys(nn_orig, {"epochs", "issue_stride_hours"}, set(), "config.nn_orig")

    training = TrainingConfig(
        batch_size=int(tr.get("batch_size", 32)),
        epochs=int(tr.get("epochs", 50)),
        learning_rate=float(tr.get("learning_rate", 1e-3)),
        optimizer=tr.get("optimizer", "adam"),
        mape_epsilon=float(tr.get("mape_epsilon", 1e-3)),
        fine_tune_epochs=int(tr.get("fine_tune_epochs", 10)),
        fine_tune_learning_rate=(float(tr["fine_tune_learning_rate"])
                                 if tr.get("fine_tune_learning_rate") is not None
                                 else None),
    )
    config = ExperimentConfig(
        hidden=tuple(arch.get("hidden", (512, 256, 128, 64))),
        activation=arch.get("activation", "relu"),
        dropout=float(arch.get("dropout", 0.2)),
        trunk_depth=int(arch.get("trunk_depth", 3)),
        history_hours=int(feats.get("history_hours", 24)),
        training=training,
        issue_stride_hours=int(sampling.get("issue_stride_hours", 1)),
        nn_orig_issue_stride_hours=(int(nn_orig["issue_stride_hours"])
                                    if "issue_stride_hours" in nn_orig else None),
        nn_orig_epochs=int(nn_orig["epochs"]) if "epochs" in nn_orig else None,
        seed=seed,
    )
    variants = tuple(obj.get("variants", VARIANT_KINDS))
    for kind in variants:
        if kind not in VARIANT_KINDS:
            raise ConfigError(f"config.variants: unknown variant {kind!r}")
    manifest = load_manifest((path.parent / obj["manifest"]))
    return manifest, variants, config


def _run_meta(config: ExperimentConfig) -> dict:
    return {"seed": config.seed, "config": config.to_json()}


def _csv_meta(config_json: dict, seed) -> dict:
    return {"seed": seed,
            "config": json.dumps(config_json, sort_keys=True, separators=(",", ":"))}


def _checkpoint_stem(kind: str, regions) -> str:
    if kind == "Mobi_MTL":
        return f"{kind}__{'+'.join(regions)}"
    raise ValueError(kind)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args) -> int:
    manifest = load_manifest(args.config)
    errors = []
    lines = []
    for entry in manifest.regions:
        try:
            from .dataset import AlignmentStats, ingest_region
            stats = AlignmentStats()
            series = ingest_region(entry, manifest.span, stats)
            gap_text = ", ".join(
                f"{format_hour_epoch(a)}..{format_hour_epoch(b)}"
                for a, b in stats.load_gaps_filled) or "none"
            lines.append(
                f"{entry.region_id}: {series.n_hours} h "
                f"[{manifest.span.start}..{manifest.span.end}], "
                f"load gaps filled: {gap_text}, weather gaps filled: "
                f"{stats.weather_gaps_filled}, mobility days filled: "
                f"{stats.mobility_days_filled}, rows dropped: {stats.rows_dropped}")
        except MobiloadError as exc:
            errors.append({"region": entry.region_id,
                           "error": type(exc).__name__, "detail": str(exc)})
    if errors:
        print(json.dumps({"errors": errors}, sort_keys=True, indent=2))
        return 1
    for line in lines:
        print(line)
    print(f"{len(manifest.regions)} regions OK")
    return 0


def _parse_synth_spec(obj: dict, seed_override: int | None):
    check_keys(obj, {"regions", "days", "seed", "start", "noise_std", "shock",
                     "mobility_weekly_amplitude", "mobility_noise",
                     "mobility_sensitivity", "splits", "mtl_groups"},
               {"regions", "days", "splits"}, "synth spec")
    shock_obj = obj.get("shock", {})
    check_keys(shock_obj, {"start_day", "depth", "recovery_slope", "jitter"},
               set(), "synth spec.shock")
    splits = obj["splits"]
    check_keys(splits, {"nn_orig", "train", "test"}, {"train", "test"},
               "synth spec.splits")
    seed = int(obj.get("seed", 0)) if seed_override is None else seed_override
    from datetime import date
    start = date.fromisoformat(obj.get("start", "2018-07-01"))
    spec = SyntheticSpec(
        n_regions=int(obj["regions"]),
        days=int(obj["days"]),
        seed=seed,
        start=start,
        shock=ShockSchedule(
            start_day=int(shock_obj.get("start_day", int(obj["days"]) - 14)),
            depth=float(shock_obj.get("depth", 0.35)),
            recovery_slope=float(shock_obj.get("recovery_slope", 0.8)),
        ),
        shock_jitter=float(shock_obj.get("jitter", 0.0)),
        noise_std=float(obj.get("noise_std", 0.01)),
        mobility_weekly_amplitude=float(obj.get("mobility_weekly_amplitude", 6.0)),
        mobility_noise=float(obj.get("mobility_noise", 1.0)),
        mobility_sensitivity=float(obj.get("mobility_sensitivity", 0.45)),
    )

    def day_span(pair, label):
        if (not isinstance(pair, list)) or len(pair) != 2:
            raise ConfigError(f"synth spec.splits.{label} must be [first_day, last_day]")
        a, b = int(pair[0]), int(pair[1])
        if not 0 <= a <= b < spec.days:
            raise ConfigError(f"synth spec.splits.{label} outside 0..days-1")
        return DateSpan(start + timedelta(days=a), start + timedelta(days=b))

    spans = {
        "train": day_span(splits["train"], "train"),
        "test": day_span(splits["test"], "test"),
        "nn_orig": day_span(splits["nn_orig"], "nn_orig") if "nn_orig" in splits else None,
    }
    return spec, spans, obj.get("mtl_groups")


def cmd_synth(args) -> int:
    obj = _read_json(args.config, "synth spec")
    spec, spans, mtl_groups = _parse_synth_spec(obj, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    regions, truth = generate_synthetic(spec)
    comment = f"generated by mobiload synth, seed={spec.seed}"

    entries = []
    for series in regions:
        entries.append(write_region_csvs(series, out / series.region_id, comment=comment))
        gt_path = out / series.region_id / "ground_truth.csv"
        with open(gt_path, "w", encoding="utf-8") as fh:
            fh.write(f"# {comment}\n")
            fh.write("timestamp_utc,load_mw\n")
            clean = truth.noiseless_load(series.region_id)
            for h, value in zip(series.hours, clean):
                fh.write(f"{format_hour_epoch(h)},{format_float(value)}\n")

    manifest_obj = {
        "span": DateSpan(spec.start, spec.start + timedelta(days=spec.days - 1)).to_json(),
        "train": spans["train"].to_json(),
        "test": spans["test"].to_json(),
        "regions": entries,
    }
    if spans["nn_orig"] is not None:
        manifest_obj["nn_orig_train"] = spans["nn_orig"].to_json()
    if mtl_groups:
        manifest_obj["mtl_groups"] = mtl_groups
    else:
        manifest_obj["mtl_groups"] = [[s.region_id for s in regions]] if len(regions) > 1 else []
    _write_json(out / "manifest.json", manifest_obj)
    _write_json(out / "synth_config.json", {"seed": spec.seed, "spec": obj})
    print(f"wrote {len(regions)} regions to {out}")
    return 0


def cmd_train(args) -> int:
    manifest, variants, config = parse_run_config(Path(args.config), args.seed)
    out = Path(args.out)
    created: list[Path] = []

    def _track(path: Path) -> Path:
        created.append(path)
        return path

    try:
        series_by_region, _ = ingest_all(manifest)
        # fail fast before any training when mobility variants lack data
        for kind in variants:
            if kind in ("Mobi", "Mobi_MTL"):
                for rid, series in series_by_region.items():
                    if not series.mobility_names:
                        raise ConfigError(
                            f"{kind} requested but region {rid!r} has no mobility data")
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out / "logs").mkdir(parents=True, exist_ok=True)
        (out / "layouts").mkdir(parents=True, exist_ok=True)
        _write_json(_track(out / "run_config.json"),
                    {"seed": config.seed, "config": config.to_json(),
                     "variants": list(variants),
                     "manifest": str(manifest.path)})
        meta = _run_meta(config)

        def write_log(stem: str, log) -> None:
            path = _track(out / "logs" / f"{stem}.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(f"# seed={config.seed}\n")
                fh.write(f"# config={json.dumps(config.to_json(), sort_keys=True, separators=(',', ':'))}\n")
                fh.write("\n".join(log.csv_lines()) + "\n")

        def write_layout(stem: str, layout) -> None:
            _write_json(_track(out / "layouts" / f"{stem}.layout.json"),
                        {"layout": layout.to_json(), "layout_hash": layout.hash(),
                         "seed": config.seed})

        for kind in variants:
            if kind == "Mobi_MTL":
                groups = manifest.mtl_groups or [manifest.region_ids]
                for group in groups:
                    spec = make_variant_spec(kind, manifest, group)
                    result = run_variant(spec, series_by_region, config, manifest.test)
                    stem = _checkpoint_stem(kind, group)
                    save_checkpoint(_track(out / "checkpoints" / f"{stem}.json"),
                                    multitask_checkpoint_payload(result, meta))
                    write_layout(stem, result.layouts[group[0]])
                    merged = result.logs["co_train"]
                    for label, log in result.logs.items():
                        if label.startswith("fine_tune/"):
                            merged.rows.extend(log.rows)
                    write_log(stem, merged)
                    if args.verbose:
                        print(f"trained {stem}")
            else:
                spec = make_variant_spec(kind, manifest)
                result = run_variant(spec, series_by_region, config, manifest.test)
                for region in spec.regions:
                    stem = f"{kind}__{region}"
                    save_checkpoint(_track(out / "checkpoints" / f"{stem}.json"),
                                    single_checkpoint_payload(result, region, meta))
                    write_layout(stem, result.layouts[region])
                    write_log(stem, result.logs[region])
                    if args.verbose:
                        print(f"trained {stem}")
        print(f"checkpoints written to {out / 'checkpoints'}")
        return 0
    except BaseException:
        for path in created:
            path.unlink(missing_ok=True)
        raise


def _evaluate_predictions(manifest: DatasetManifest, variants, config,
                          checkpoint_dir: Path, series_by_region) -> EvaluationReport:
    started = time.perf_counter()
    predictions = []
    for kind in variants:
        if kind == "Mobi_MTL":
            groups = manifest.mtl_groups or [manifest.region_ids]
            for group in groups:
                path = checkpoint_dir / f"{_checkpoint_stem(kind, group)}.json"
                payload = load_checkpoint(path)
                for region in group:
                    params, arch, layout, norm = model_from_checkpoint(payload, task=region)
                    predictions.append(predict_region(
                        params, arch, layout, norm, series_by_region[region],
                        manifest.test, variant=kind))
        else:
            for region in manifest.region_ids:
                path = checkpoint_dir / f"{kind}__{region}.json"
                payload = load_checkpoint(path)
                params, arch, layout, norm = model_from_checkpoint(payload)
                predictions.append(predict_region(
                    params, arch, layout, norm, series_by_region[region],
                    manifest.test, variant=kind))
    return EvaluationReport(predictions=predictions, test_span=manifest.test,
                            runtime_s=time.perf_counter() - started)


def cmd_evaluate(args) -> int:
    manifest, variants, config = parse_run_config(Path(args.config), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_dir = Path(args.checkpoints) if args.checkpoints else out / "checkpoints"
    if not checkpoint_dir.exists():
        raise MissingCheckpoint(f"checkpoint directory {checkpoint_dir} does not exist")
    series_by_region, _ = ingest_all(manifest)
    report = _evaluate_predictions(manifest, variants, config, checkpoint_dir,
                                   series_by_region)
    meta = _csv_meta(config.to_json(), config.seed)
    write_report_csv(report, out / "report.csv", meta)
    write_predictions_csv(report, out / "predictions.csv", meta)
    write_weekly_csv(report, out / "weekly_mape.csv", meta)
    summary = format_summary_table(report)
    (out / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    if not args.no_figures:
        from .plots import render_evaluation_figures
        render_evaluation_figures(report, out / "figures")
    print(summary)
    comparison = compare_variants(report)
    if comparison.improvement_ratio is None and args.verbose:
        print("improvement ratio unavailable (needs NN_Orig and Mobi_MTL)")
    print(f"runtime: {report.runtime_s:.1f} s")
    return 0


def cmd_project(args) -> int:
    obj = _read_json(Path(args.config), "scenario")
    check_keys(obj, {"checkpoint", "task", "manifest", "region", "target_span",
                     "template_span", "estimate_window", "level_pct",
                     "mobility_mean", "mobility_std", "samples", "seed",
                     "confidence"},
               {"checkpoint", "manifest", "region", "target_span", "template_span"},
               "scenario")
    base = Path(args.config).parent
    payload = load_checkpoint(base / obj["checkpoint"])
    task = obj.get("task")
    params, arch, layout, norm = model_from_checkpoint(
        payload, task=task if payload["kind"] == "multitask" else None)

    manifest = load_manifest(base / obj["manifest"])
    region = obj["region"]
    entry = next((e for e in manifest.regions if e.region_id == region), None)
    if entry is None:
        raise ConfigError(f"scenario region {region!r} not in manifest")
    from .dataset import ingest_region
    series = ingest_region(entry, manifest.span)

    mean = dict(obj.get("mobility_mean", {}))
    std = dict(obj.get("mobility_std", {}))
    if "estimate_window" in obj:
        window = DateSpan.from_json(obj["estimate_window"], "estimate_window")
        stats = estimate_mobility_stats(series, window)
        level = float(obj.get("level_pct", 100.0)) / 100.0
        for name, (m, s) in stats.items():
            mean.setdefault(name, m * level)
            std.setdefault(name, s)

    seed = int(obj.get("seed", 0)) if args.seed is None else args.seed
    scenario = ScenarioSpec(
        target_span=DateSpan.from_json(obj["target_span"], "target_span"),
        template_span=DateSpan.from_json(obj["template_span"], "template_span"),
        mobility_mean=mean,
        mobility_std=std,
        sample_count=int(obj.get("samples", 200)),
        seed=seed,
        confidence=float(obj.get("confidence", 0.95)),
    )
    projection = project(scenario, params, arch, layout, norm, series)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": seed,
            "scenario": json.dumps(scenario.to_json(), sort_keys=True,
                                   separators=(",", ":"))}
    write_projection_csv(projection, out / "projection.csv", meta)
    if not args.no_figures:
        from .plots import plot_projection, save_figure
        save_figure(plot_projection(projection, title=f"Scenario projection, {region}"),
                    out / "projection.png")
    print(f"projection written to {out / 'projection.csv'} "
          f"({projection.n} hours, mean point {projection.point_mw.mean():.1f} MW)")
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck
    passed, lines = run_selfcheck(inject_gradient_fault=args.inject_gradient_fault)
    for line in lines:
        print(line)
    print("selfcheck: " + ("all checks passed" if passed else "FAILURES above"))
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobiload",
        description="Mobility-aware day-ahead load forecasting pipeline")
    parser.add_argument("--version", action="version", version=f"mobiload {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=False):
        p.add_argument("--config", required=True, help="path to the command's config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=needs_out, default=None, help="output directory")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("ingest", help="validate and align a dataset manifest")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    common(p, needs_out=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the configured variants to checkpoints")
    common(p, needs_out=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints on the test window")
    common(p, needs_out=True)
    p.add_argument("--checkpoints", default=None,
                   help="checkpoint directory (default: <out>/checkpoints)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("project", help="project loads under a mobility scenario")
    common(p, needs_out=True)
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("selfcheck", help="run fast internal consistency checks")
    p.add_argument("--inject-gradient-fault", action="store_true",
                   help="debug: corrupt one gradient to prove the check trips")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MobiloadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal error
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
