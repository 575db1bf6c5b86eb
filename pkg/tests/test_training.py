"""MAPE loss, single-task training, multi-task symmetry, fine-tune freezing."""

import json

import numpy as np
import pytest

from mobiload.errors import (
    ConfigError,
    DimensionMismatch,
    EmptyInput,
    NonFiniteLoss,
    UnknownTask,
)
from mobiload.features import SampleSet
from mobiload.neuralnet import (
    ArchitectureSpec,
    init_params,
    params_to_json,
)
from mobiload.selfcheck import overfit_fixture
from mobiload.training import (
    MultiTaskModel,
    TrainingConfig,
    fine_tune,
    init_multitask,
    mape,
    train_multitask,
    train_single,
)


class TestMape:
    def test_identity_is_zero(self):
        assert mape([0.3, 0.7, 1.0], [0.3, 0.7, 1.0]) == 0.0

    def test_ten_percent(self):
        assert mape([1.1], [1.0]) == pytest.approx(10.0, abs=1e-12)

    def test_hand_case(self):
        assert mape([0.55, 0.2], [0.5, 0.25]) == pytest.approx(15.0, abs=1e-12)

    def test_matches_plain_python_loop(self):
        rng = np.random.default_rng(17)
        preds = rng.uniform(0.0, 2.0, 1000)
        targets = rng.uniform(0.05, 1.5, 1000)
        eps = 1e-3
        oracle = 100.0 * sum(abs(p - t) / max(t, eps)
                             for p, t in zip(preds, targets)) / len(preds)
        got = mape(preds, targets, eps)
        assert abs(got - oracle) / oracle < 1e-12

    def test_epsilon_floors_small_targets(self):
        assert mape([1.0], [0.0], epsilon=0.5) == pytest.approx(200.0)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            mape([], [])

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mape([1.0], [1.0, 2.0])


@pytest.fixture(scope="module")
def overfit_run():
    data, arch, config = overfit_fixture()
    params = init_params(arch, seed=17)
    params, log = train_single(params, arch, data, config)
    return data, arch, config, params, log


class TestTrainSingle:
    def test_zero_learning_rate_changes_nothing(self):
        data, arch, _ = overfit_fixture()
        config = TrainingConfig(batch_size=16, epochs=2, learning_rate=0.0, seed=1)
        params = init_params(arch, 0)
        before = params.copy()
        train_single(params, arch, data, config)
        assert params == before

    def test_same_seed_reproduces_log_and_params(self):
        data, arch, _ = overfit_fixture()
        config = TrainingConfig(batch_size=16, epochs=4, learning_rate=1e-3, seed=5)
        p1, log1 = train_single(init_params(arch, 2), arch, data, config)
        p2, log2 = train_single(init_params(arch, 2), arch, data, config)
        assert p1 == p2
        assert log1.rows == log2.rows

    def test_log_has_one_row_per_epoch(self, overfit_run):
        data, arch, config, params, log = overfit_run
        assert len(log.rows) == config.epochs
        assert [row[0] for row in log.rows] == list(range(config.epochs))

    def test_overfits_small_fixture_below_one_percent(self, overfit_run):
        *_, log = overfit_run
        assert log.rows[-1][2] < 1.0

    def test_late_epochs_beat_early_epochs(self, overfit_run):
        *_, log = overfit_run
        series = [value for _, _, value in log.rows]
        tenth = max(1, len(series) // 10)
        assert np.median(series[-tenth:]) < np.median(series[:tenth])

    def test_constant_predictor_upper_bounds_trained_mape(self, overfit_run):
        data, arch, config, params, log = overfit_run
        constant = mape(np.full(data.n, data.targets.mean()), data.targets,
                        config.mape_epsilon)
        assert log.rows[-1][2] < constant

    def test_dimension_mismatch(self):
        data, arch, _ = overfit_fixture()
        bad_arch = ArchitectureSpec.standard(data.width + 1, hidden=(8,),
                                             dropout=0.0, trunk_depth=1)
        with pytest.raises(DimensionMismatch):
            train_single(init_params(bad_arch, 0), bad_arch, data,
                         TrainingConfig(epochs=1))

    def test_divergence_raises_with_last_finite_params(self):
        data, arch, _ = overfit_fixture()
        config = TrainingConfig(batch_size=16, epochs=2, learning_rate=1e200,
                                optimizer="sgd", seed=0)
        params = init_params(arch, 0)
        start = params.copy()
        with np.errstate(over="ignore"), pytest.raises(NonFiniteLoss) as err:
            train_single(params, arch, data, config)
        assert err.value.params is params
        assert params.all_finite()
        assert params == start          # diverged in epoch 0, restored to its start


def identical_task_pair(dropout=0.0):
    data, _, _ = overfit_fixture()
    clone = SampleSet(task_id="twin", layout=data.layout, inputs=data.inputs,
                      targets=data.targets, issue_hours=data.issue_hours,
                      horizons=data.horizons)
    arch = ArchitectureSpec.standard(data.width, hidden=(16, 8, 8),
                                     dropout=dropout, trunk_depth=2)
    hashes = {data.task_id: data.layout_hash, "twin": clone.layout_hash}
    model = init_multitask(arch, (data.task_id, "twin"), hashes, seed=31)
    return model, {data.task_id: data, "twin": clone}


class TestMultiTask:
    def test_single_task_group_rejected(self):
        data, arch, _ = overfit_fixture()
        with pytest.raises(ConfigError):
            init_multitask(arch, (data.task_id,), {data.task_id: data.layout_hash}, 0)

    def test_identical_tasks_produce_identical_heads(self):
        model, datasets = identical_task_pair()
        config = TrainingConfig(batch_size=16, epochs=3, learning_rate=1e-3, seed=3)
        model, _ = train_multitask(model, datasets, config)
        a, b = model.task_order
        assert model.heads[a] == model.heads[b]

    def test_identical_tasks_stay_identical_with_dropout(self):
        model, datasets = identical_task_pair(dropout=0.25)
        config = TrainingConfig(batch_size=16, epochs=2, learning_rate=1e-3, seed=4)
        model, _ = train_multitask(model, datasets, config)
        a, b = model.task_order
        assert model.heads[a] == model.heads[b]

    def test_trunk_is_one_shared_object(self):
        model, datasets = identical_task_pair()
        config = TrainingConfig(batch_size=16, epochs=2, learning_rate=1e-3, seed=3)
        model, _ = train_multitask(model, datasets, config)
        a, b = model.task_order
        va, vb = model.compose(a), model.compose(b)
        for i in model.trunk_layers:
            assert va.weights[i] is vb.weights[i]
        assert json.dumps(params_to_json(
            MultiTaskModel.compose(model, a))[:len(model.trunk_layers)]) == \
            json.dumps(params_to_json(model.compose(b))[:len(model.trunk_layers)])

    def test_reproducible_across_runs(self):
        config = TrainingConfig(batch_size=16, epochs=2, learning_rate=1e-3, seed=9)
        m1, log1 = train_multitask(*[x for x in identical_task_pair()], config)
        m2, log2 = train_multitask(*[x for x in identical_task_pair()], config)
        assert log1.rows == log2.rows
        assert m1.trunk == m2.trunk

    def test_unequal_task_sizes_resample_with_replacement(self):
        model, datasets = identical_task_pair()
        a, b = model.task_order
        short = datasets[b]
        datasets[b] = SampleSet(task_id=b, layout=short.layout,
                                inputs=short.inputs[:20], targets=short.targets[:20],
                                issue_hours=short.issue_hours[:20],
                                horizons=short.horizons[:20])
        config = TrainingConfig(batch_size=16, epochs=2, learning_rate=1e-3, seed=3)
        model, log = train_multitask(model, datasets, config)
        assert {t for _, t, _ in log.rows} == {a, b}

    def test_layout_hash_mismatch_rejected(self):
        model, datasets = identical_task_pair()
        a, b = model.task_order
        model.layout_hashes[b] = "0" * 64
        with pytest.raises(DimensionMismatch):
            init_multitask(model.spec, (a, b), model.layout_hashes, 0)


class TestFineTune:
    def _trained(self):
        model, datasets = identical_task_pair()
        config = TrainingConfig(batch_size=16, epochs=2, learning_rate=1e-3, seed=3,
                                fine_tune_epochs=3)
        model, _ = train_multitask(model, datasets, config)
        return model, datasets, config

    def test_zero_fine_tune_epochs_is_a_no_op(self):
        model, datasets, config = self._trained()
        a = model.task_order[0]
        before = model.compose(a).copy()
        fine_tune(model, a, datasets[a],
                  TrainingConfig(batch_size=16, epochs=1, learning_rate=1e-3,
                                 seed=3, fine_tune_epochs=0))
        assert model.compose(a) == before

    def test_trunk_bytes_identical_before_and_after(self):
        model, datasets, config = self._trained()
        a = model.task_order[0]
        trunk_before = json.dumps(params_to_json(model.trunk), sort_keys=True)
        fine_tune(model, a, datasets[a], config)
        trunk_after = json.dumps(params_to_json(model.trunk), sort_keys=True)
        assert trunk_before == trunk_after

    def test_other_heads_untouched_and_target_head_changes(self):
        model, datasets, config = self._trained()
        a, b = model.task_order
        head_a_before = model.heads[a].copy()
        head_b_before = json.dumps(params_to_json(model.heads[b]), sort_keys=True)
        fine_tune(model, a, datasets[a], config)
        assert json.dumps(params_to_json(model.heads[b]), sort_keys=True) == head_b_before
        assert model.heads[a] != head_a_before

    def test_unknown_task(self):
        model, datasets, config = self._trained()
        with pytest.raises(UnknownTask):
            fine_tune(model, "nope", datasets[model.task_order[0]], config)
