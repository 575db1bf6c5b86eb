"""Variant protocol, signed errors, comparisons, and checkpoint payloads."""

import numpy as np
import pytest

from conftest import fast_config, small_manifest
from mobiload.errors import (
    ConfigError,
    MismatchedTestSets,
    SpanConflict,
    ZeroActual,
)
from mobiload.evaluation import (
    EvaluationReport,
    PredictionSet,
    VariantSpec,
    compare_variants,
    format_summary_table,
    make_variant_spec,
    model_from_checkpoint,
    multitask_checkpoint_payload,
    predict_region,
    run_experiment,
    run_variant,
    signed_errors,
    single_checkpoint_payload,
)
from mobiload.neuralnet import forward
from mobiload.util import DateSpan


class TestSignedErrors:
    def test_identity_gives_zeros(self):
        assert np.all(signed_errors([100.0, 50.0], [100.0, 50.0]) == 0.0)

    def test_over_forecast_is_positive_ten(self):
        assert signed_errors([110.0], [100.0])[0] == pytest.approx(10.0)

    def test_hand_case_mean_bias(self):
        err = signed_errors([90.0, 210.0], [100.0, 200.0])
        assert err[0] == pytest.approx(-10.0)
        assert err[1] == pytest.approx(5.0)
        assert err.mean() == pytest.approx(-2.5)

    def test_zero_actual_rejected(self):
        with pytest.raises(ZeroActual):
            signed_errors([1.0], [0.0])


def prediction_set(region, variant, mapes, base_pred=None):
    """A small synthetic PredictionSet whose MAPE is exactly `mapes`."""
    n = 8
    actual = np.full(n, 100.0)
    pred = actual * (1 + mapes / 100.0) if base_pred is None else base_pred
    hours = np.arange(n, dtype=np.int64)
    return PredictionSet(region=region, variant=variant,
                         issue_hours=hours, horizons=np.ones(n, dtype=np.int64),
                         target_hours=hours + 1, pred_mw=pred, actual_mw=actual)


class TestCompareVariants:
    def test_table_one_style_row_ranks_mtl_best(self):
        # published Seattle-style MAPEs: 15.01 / 7.55 / 6.51 / 2.28
        report = EvaluationReport(
            predictions=[prediction_set("seattle", "NN_Orig", 15.01),
                         prediction_set("seattle", "Retrain", 7.55),
                         prediction_set("seattle", "Mobi", 6.51),
                         prediction_set("seattle", "Mobi_MTL", 2.28)],
            test_span=DateSpan.from_json({"start": "2020-05-01", "end": "2020-05-15"}))
        table = report.mape_table()
        best = min(table, key=table.get)
        assert best == ("seattle", "Mobi_MTL")
        comparison = compare_variants(report)
        assert comparison.improvement_ratio == pytest.approx(15.01 / 2.28)

    def test_identical_predictions_give_ratio_one(self):
        report = EvaluationReport(
            predictions=[prediction_set("r", "NN_Orig", 5.0),
                         prediction_set("r", "Mobi_MTL", 5.0)],
            test_span=DateSpan.from_json({"start": "2020-05-01", "end": "2020-05-15"}))
        assert compare_variants(report).improvement_ratio == pytest.approx(1.0)

    def test_mismatched_test_sets_refused(self):
        a = prediction_set("r", "NN_Orig", 5.0)
        b = prediction_set("r", "Mobi_MTL", 5.0)
        b.target_hours = b.target_hours + 100
        report = EvaluationReport(predictions=[a, b], test_span=DateSpan.from_json(
            {"start": "2020-05-01", "end": "2020-05-15"}))
        with pytest.raises(MismatchedTestSets):
            compare_variants(report)

    def test_report_mape_equals_mean_abs_signed_errors(self):
        rng = np.random.default_rng(3)
        pred = 100.0 + rng.normal(0, 5, 8)
        p = prediction_set("r", "Mobi", 0.0, base_pred=pred)
        assert p.mape() == float(np.mean(np.abs(p.signed_errors())))


class TestVariantSpec:
    def test_group_of_one_rejected_for_mtl(self):
        with pytest.raises(ConfigError):
            VariantSpec(kind="Mobi_MTL", train_span=DateSpan.from_json(
                {"start": "2020-02-15", "end": "2020-04-30"}),
                regions=("only",), with_mobility=True)

    def test_mobility_flag_must_match_kind(self):
        span = DateSpan.from_json({"start": "2020-02-15", "end": "2020-04-30"})
        with pytest.raises(ConfigError):
            VariantSpec(kind="NN_Orig", train_span=span, regions=("a",),
                        with_mobility=True)
        with pytest.raises(ConfigError):
            VariantSpec(kind="Mobi", train_span=span, regions=("a",),
                        with_mobility=False)

    def test_unknown_kind(self):
        span = DateSpan.from_json({"start": "2020-02-15", "end": "2020-04-30"})
        with pytest.raises(ConfigError):
            VariantSpec(kind="Magic", train_span=span, regions=("a",),
                        with_mobility=False)


@pytest.fixture(scope="module")
def experiment(shock_fixture):
    manifest, series_by_region, truth, spec = shock_fixture
    config = fast_config(seed=1)
    report, results = run_experiment(manifest, series_by_region, config)
    return manifest, series_by_region, config, report, results


class TestRunVariant:
    def test_prediction_count_formula(self, experiment):
        manifest, series_by_region, config, report, results = experiment
        days = manifest.test.n_days
        regions = len(manifest.region_ids)
        for variant in report.variants():
            count = sum(p.n for p in report.predictions if p.variant == variant)
            assert count == 24 * (days - 1) * regions

    def test_all_region_variant_pairs_present(self, experiment):
        manifest, _, _, report, _ = experiment
        assert set(report.mape_table()) == {
            (r, v) for r in manifest.region_ids
            for v in ("NN_Orig", "Retrain", "Mobi", "Mobi_MTL")}

    def test_train_span_touching_test_refused(self, shock_fixture):
        manifest, series_by_region, _, spec = shock_fixture
        bad = VariantSpec(kind="Retrain", train_span=manifest.test,
                          regions=tuple(manifest.region_ids), with_mobility=False)
        with pytest.raises(SpanConflict):
            run_variant(bad, series_by_region, fast_config(), manifest.test)

    def test_mobility_variant_needs_mobility_data(self, shock_fixture):
        manifest, series_by_region, _, spec = shock_fixture
        stripped = {}
        for rid, s in series_by_region.items():
            stripped[rid] = type(s)(
                region_id=s.region_id, timezone=s.timezone, hours=s.hours,
                load=s.load, weather=s.weather, weather_names=s.weather_names,
                mobility_days=np.empty(0, dtype=np.int64),
                mobility=np.empty((0, 0)), mobility_names=(),
                holidays=s.holidays)
        spec_m = make_variant_spec("Mobi", manifest)
        with pytest.raises(ConfigError):
            run_variant(spec_m, stripped, fast_config(), manifest.test)

    def test_shocked_test_window_hurts_nn_orig(self, experiment):
        # pre-shock heldout window vs the post-shock test window
        manifest, series_by_region, config, report, results = experiment
        result = results["NN_Orig"][0]
        validation_span = DateSpan.from_json(
            {"start": "2018-09-09", "end": "2018-09-16"})   # days 70..77, pre-shock
        for region in manifest.region_ids:
            arch = config.architecture(result.layouts[region].width)
            val = predict_region(result.params_for(region), arch,
                                 result.layouts[region], result.normalizers[region],
                                 series_by_region[region], validation_span)
            test_mape = report.get(region, "NN_Orig").mape()
            assert test_mape > val.mape()

    def test_mtl_trunk_shared_across_composed_views(self, experiment):
        *_, results = experiment
        model = results["Mobi_MTL"][0].mtl_model
        views = [model.compose(t) for t in model.task_order]
        for i in model.trunk_layers:
            assert all(v.weights[i] is views[0].weights[i] for v in views)

    def test_experiment_reproducible(self, shock_fixture, experiment):
        manifest, series_by_region, truth, spec = shock_fixture
        _, _, config, report, _ = experiment
        report2, _ = run_experiment(manifest, series_by_region, config)
        for p1, p2 in zip(report.predictions, report2.predictions):
            assert p1.region == p2.region and p1.variant == p2.variant
            assert np.array_equal(p1.pred_mw, p2.pred_mw)


class TestCheckpointPayloads:
    def test_single_round_trip_predicts_identically(self, experiment, shock_fixture):
        manifest, series_by_region, config, report, results = experiment
        result = results["Mobi"][0]
        region = manifest.region_ids[0]
        payload = single_checkpoint_payload(result, region, {"seed": config.seed})
        params, arch, layout, norm = model_from_checkpoint(payload)
        redone = predict_region(params, arch, layout, norm,
                                series_by_region[region], manifest.test, variant="Mobi")
        assert np.array_equal(redone.pred_mw, report.get(region, "Mobi").pred_mw)

    def test_multitask_round_trip_predicts_identically(self, experiment, shock_fixture):
        manifest, series_by_region, config, report, results = experiment
        result = results["Mobi_MTL"][0]
        payload = multitask_checkpoint_payload(result, {"seed": config.seed})
        for region in manifest.region_ids:
            params, arch, layout, norm = model_from_checkpoint(payload, task=region)
            redone = predict_region(params, arch, layout, norm,
                                    series_by_region[region], manifest.test,
                                    variant="Mobi_MTL")
            assert np.array_equal(redone.pred_mw,
                                  report.get(region, "Mobi_MTL").pred_mw)

    def test_multitask_checkpoint_serializes_trunk_once(self, experiment):
        *_, results = experiment
        payload = multitask_checkpoint_payload(results["Mobi_MTL"][0], {})
        assert "trunk" in payload
        l = len(results["Mobi_MTL"][0].mtl_model.trunk.weights)
        assert len(payload["trunk"]) == l
        for head in payload["heads"].values():
            assert len(head) == len(results["Mobi_MTL"][0].mtl_model.heads[
                list(payload["heads"])[0]].weights)


class TestReportOutputs:
    def test_summary_table_mentions_every_variant(self, experiment):
        *_, report, _ = experiment
        text = format_summary_table(report)
        for v in ("NN_Orig", "Retrain", "Mobi", "Mobi_MTL"):
            assert v in text
        assert "improvement ratio" in text

    def test_weekly_rows_cover_test_span(self, experiment):
        *_, report, _ = experiment
        rows = report.weekly_rows()
        assert rows
        assert all(row["mape"] >= 0 for row in rows)

    def test_summary_stats_shapes(self, experiment):
        *_, report, _ = experiment
        rows = report.summary_rows()
        for row in rows:
            assert row["p05"] <= row["p50"] <= row["p95"]
            assert 0.0 <= row["over_share"] <= 1.0
