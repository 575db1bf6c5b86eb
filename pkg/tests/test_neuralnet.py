"""Forward/backward oracles, gradient checking, dropout, serialization."""

import time

import numpy as np
import pytest

from mobiload.errors import ConfigError, ShapeMismatch
from mobiload.neuralnet import (
    ArchitectureSpec,
    NetworkParams,
    backward,
    checkpoint_bytes,
    forward,
    gradient_check,
    init_params,
    load_checkpoint,
    params_from_json,
    params_to_json,
    save_checkpoint,
)


def tiny_net(w1=2.0, b1=1.0, w2=3.0, b2=-1.0, activation="relu"):
    spec = ArchitectureSpec((1, 1, 1), (activation,), (0.0,), 1)
    params = NetworkParams([np.array([[w1]]), np.array([[w2]])],
                           [np.array([b1]), np.array([b2])])
    return spec, params


class TestInit:
    def test_biases_zero_and_deterministic(self):
        spec = ArchitectureSpec.standard(10, hidden=(8, 4), dropout=0.0, trunk_depth=1)
        a = init_params(spec, seed=3)
        b = init_params(spec, seed=3)
        assert all(np.all(bias == 0.0) for bias in a.biases)
        assert a == b
        assert a != init_params(spec, seed=4)

    def test_weight_bound_for_512_by_46_layer(self):
        spec = ArchitectureSpec.standard(46, hidden=(512,), dropout=0.0, trunk_depth=1)
        params = init_params(spec, seed=0)
        bound = np.sqrt(6.0 / (46 + 512))
        assert bound == pytest.approx(0.1037, abs=2e-4)
        assert np.abs(params.weights[0]).max() < bound


class TestForward:
    def test_zero_params_give_zero_output(self):
        spec = ArchitectureSpec((3, 4, 1), ("relu",), (0.0,), 1)
        params = NetworkParams([np.zeros((4, 3)), np.zeros((1, 4))],
                               [np.zeros(4), np.zeros(1)])
        out = forward(params, spec, np.array([1.0, -2.0, 0.5])).output
        assert out[0] == 0.0

    def test_hand_arithmetic_positive_branch(self):
        spec, params = tiny_net()
        trace = forward(params, spec, np.array([1.0]))
        assert trace.activations[0][0, 0] == 3.0       # relu(2*1 + 1)
        assert trace.output[0] == 8.0                  # 3*3 - 1

    def test_hand_arithmetic_negative_branch(self):
        spec, params = tiny_net()
        trace = forward(params, spec, np.array([-1.0]))
        assert trace.activations[0][0, 0] == 0.0       # relu(-1)
        assert trace.output[0] == -1.0

    def test_batched_forward_matches_loop(self):
        spec = ArchitectureSpec((5, 7, 3, 1), ("relu", "sigmoid"), (0.0, 0.0), 1)
        params = init_params(spec, 1)
        x = np.random.default_rng(2).standard_normal((6, 5))
        batched = forward(params, spec, x).output
        single = np.array([forward(params, spec, row).output[0] for row in x])
        # batched matmul may reorder BLAS summation; only ulp-level drift allowed
        assert np.allclose(batched, single, rtol=1e-12, atol=0)

    def test_shape_mismatch(self):
        spec, params = tiny_net()
        with pytest.raises(ShapeMismatch):
            forward(params, spec, np.array([1.0, 2.0]))


class TestBackward:
    def test_hand_chain_rule(self):
        spec, params = tiny_net()
        trace = forward(params, spec, np.array([1.0]))
        grads = backward(params, spec, trace, 1.0)
        assert grads.weights[1][0, 0] == 3.0    # dOut/dW2 = Y1
        assert grads.biases[1][0] == 1.0
        assert grads.weights[0][0, 0] == 3.0    # W2 * relu' * x
        assert grads.biases[0][0] == 3.0

    def test_zero_upstream_gives_zero_gradients(self):
        spec = ArchitectureSpec((4, 6, 1), ("sigmoid",), (0.0,), 1)
        params = init_params(spec, 5)
        trace = forward(params, spec, np.ones(4))
        grads = backward(params, spec, trace, 0.0)
        assert all(np.all(g == 0.0) for g in grads.weights)
        assert all(np.all(g == 0.0) for g in grads.biases)

    def test_inactive_relu_unit_gets_zero_weight_gradients(self):
        spec, params = tiny_net()
        trace = forward(params, spec, np.array([-1.0]))    # pre-activation -1 < 0
        grads = backward(params, spec, trace, 1.0)
        assert grads.weights[0][0, 0] == 0.0
        assert grads.biases[0][0] == 0.0


class TestGradientCheck:
    def test_five_layer_mixed_net_passes(self):
        spec = ArchitectureSpec((8, 16, 8, 4, 1), ("relu", "sigmoid", "relu"),
                                (0.0,) * 3, 2)
        report = gradient_check(spec, seed=12, tolerance=1e-4)
        assert report.passed, report.max_rel_error

    def test_corrupted_gradient_fails(self):
        spec = ArchitectureSpec((8, 16, 8, 4, 1), ("relu", "relu", "relu"),
                                (0.0,) * 3, 2)
        report = gradient_check(spec, seed=12, tolerance=1e-4, corrupt=True)
        assert not report.passed

    def test_linear_net_is_exact_to_float_noise(self):
        spec = ArchitectureSpec((6, 5, 1), ("linear",), (0.0,), 1)
        report = gradient_check(spec, seed=9, tolerance=1e-4)
        assert report.max_rel_error < 1e-8

    def test_dropout_must_be_off(self):
        spec = ArchitectureSpec((4, 4, 1), ("relu",), (0.5,), 1)
        with pytest.raises(ConfigError):
            gradient_check(spec, seed=0)


class TestDropout:
    def test_infer_mode_uses_no_masks(self):
        spec = ArchitectureSpec((4, 8, 1), ("relu",), (0.5,), 1)
        params = init_params(spec, 2)
        trace = forward(params, spec, np.ones(4))
        assert trace.masks == [None]

    def test_infer_forward_is_pure(self):
        spec = ArchitectureSpec((4, 8, 1), ("relu",), (0.5,), 1)
        params = init_params(spec, 2)
        x = np.random.default_rng(1).standard_normal(4)
        a = forward(params, spec, x).output
        b = forward(params, spec, x).output
        assert np.array_equal(a, b)

    def test_train_mode_expectation_matches_infer(self):
        # single hidden layer: the output is affine in the dropped activations,
        # so the train-mode expectation equals the infer-mode output exactly
        spec = ArchitectureSpec((6, 32, 1), ("sigmoid",), (0.3,), 1)
        params = init_params(spec, 7)
        x = np.random.default_rng(8).standard_normal(6)
        infer = forward(params, spec, x).output[0]
        rng = np.random.default_rng(99)
        draws = 10_000
        total = 0.0
        batch = np.tile(x, (draws, 1))
        total = forward(params, spec, batch, mode="train", rng=rng).output.mean()
        assert abs(total - infer) / abs(infer) < 0.01

    def test_masks_scale_by_keep_probability(self):
        spec = ArchitectureSpec((3, 50, 1), ("relu",), (0.4,), 1)
        params = init_params(spec, 3)
        trace = forward(params, spec, np.ones(3), mode="train",
                        rng=np.random.default_rng(5))
        mask = trace.masks[0]
        assert set(np.unique(mask)).issubset({0.0, 1.0 / 0.6})


class TestTimingLinearity:
    def test_doubling_one_hidden_width_stays_near_linear(self):
        # params scale ~2x when one hidden width doubles (input/output fixed);
        # a quadratic implementation would show ~4x
        timings = {}
        x = np.random.default_rng(0).standard_normal((256, 64))
        for width in (256, 512):
            spec = ArchitectureSpec.standard(64, hidden=(width,), dropout=0.0,
                                             trunk_depth=1)
            params = init_params(spec, 0)
            forward(params, spec, x)       # warm up
            best = min(
                (lambda t0: (forward(params, spec, x), time.perf_counter() - t0))(
                    time.perf_counter())[1]
                for _ in range(7))
            timings[width] = best
        assert timings[512] / timings[256] < 2.5


class TestCheckpoints:
    def test_params_round_trip_bit_exact(self):
        spec = ArchitectureSpec.standard(11, hidden=(9, 5), dropout=0.1, trunk_depth=2)
        params = init_params(spec, 21)
        back = params_from_json(params_to_json(params))
        assert back == params

    def test_save_load_round_trip_and_byte_stability(self, tmp_path):
        spec = ArchitectureSpec.standard(7, hidden=(6, 3), dropout=0.0, trunk_depth=1)
        params = init_params(spec, 4)
        payload = {"kind": "single", "architecture": spec.to_json(),
                   "layers": params_to_json(params)}
        path = tmp_path / "model.json"
        save_checkpoint(path, payload)
        first = path.read_bytes()
        loaded = load_checkpoint(path)
        assert params_from_json(loaded["layers"]) == params
        assert ArchitectureSpec.from_json(loaded["architecture"]) == spec
        save_checkpoint(path, payload)
        assert path.read_bytes() == first

    def test_checkpoint_bytes_deterministic_regardless_of_key_order(self):
        a = checkpoint_bytes({"b": 1, "a": [1.5, -0.0]})
        b = checkpoint_bytes({"a": [1.5, -0.0], "b": 1})
        assert a == b
