"""Fully-connected network with hand-written reverse-mode gradients.

Hidden layer i computes a_i = act(W_i a_{i-1} + b_i) with optional inverted
dropout in train mode; the output layer is affine with a single unit. All
arithmetic is float64. Forward accepts a single vector or a (batch, dim)
matrix; gradients from a batched backward pass are summed over the batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingCheckpoint, ShapeMismatch

ACTIVATIONS = ("relu", "sigmoid", "linear")

CHECKPOINT_FORMAT = "mobiload-checkpoint"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Architecture and parameters


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer widths plus per-hidden-layer activation and dropout settings.

    widths[0] is the input dimension and widths[-1] must be 1. trunk_depth is
    the number of leading layers shared in a multi-task model.
    """

    widths: tuple
    activations: tuple
    dropout: tuple
    trunk_depth: int = 1

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ConfigError("need at least two layers (one hidden plus output)")
        if self.widths[-1] != 1:
            raise ConfigError("output width must be 1")
        if any(w < 1 for w in self.widths):
            raise ConfigError("layer widths must be positive")
        if len(self.activations) != self.m - 1 or len(self.dropout) != self.m - 1:
            raise ConfigError("need one activation and dropout rate per hidden layer")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")
        for rate in self.dropout:
            if not 0.0 <= rate < 1.0:
                raise ConfigError("dropout rate must lie in [0, 1)")
        if not 1 <= self.trunk_depth < self.m:
            raise ConfigError("trunk_depth must satisfy 1 <= l < m")

    @property
    def m(self) -> int:
        """Number of weight layers."""
        return len(self.widths) - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def n_params(self) -> int:
        return sum((self.widths[i] + 1) * self.widths[i + 1] for i in range(self.m))

    @classmethod
    def standard(cls, input_dim: int, hidden=(512, 256, 128, 64), activation="relu",
                 dropout=0.2, trunk_depth=3) -> "ArchitectureSpec":
        hidden = tuple(int(h) for h in hidden)
        return cls(
            widths=(int(input_dim),) + hidden + (1,),
            activations=(activation,) * len(hidden),
            dropout=(float(dropout),) * len(hidden),
            trunk_depth=int(trunk_depth),
        )

    def to_json(self) -> dict:
        return {
            "widths": list(self.widths),
            "activations": list(self.activations),
            "dropout": list(self.dropout),
            "trunk_depth": self.trunk_depth,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ArchitectureSpec":
        return cls(
            widths=tuple(int(w) for w in obj["widths"]),
            activations=tuple(obj["activations"]),
            dropout=tuple(float(d) for d in obj["dropout"]),
            trunk_depth=int(obj["trunk_depth"]),
        )


@dataclass
class NetworkParams:
    """Per-layer weight matrices (out, in) and bias vectors (out,)."""

    weights: list
    biases: list

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights],
                             [b.copy() for b in self.biases])

    def copy_into(self, other: "NetworkParams") -> None:
        for i in range(self.n_layers):
            other.weights[i][...] = self.weights[i]
            other.biases[i][...] = self.biases[i]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and \
            all(np.all(np.isfinite(b)) for b in self.biases)

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return (self.n_layers == other.n_layers
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))


def init_params(spec: ArchitectureSpec, seed: int) -> NetworkParams:
    """Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(spec.m):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        r = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-r, r, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases)


# ---------------------------------------------------------------------------
# Forward / backward


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class ForwardTrace:
    """Everything backward needs: inputs, pre-activations, post-dropout
    activations, the dropout masks used (None in infer mode), and outputs."""

    inputs: np.ndarray
    pre_activations: list
    activations: list          # post-dropout (the next layer's actual input)
    raw_activations: list      # pre-dropout, for activation derivatives
    masks: list
    output: np.ndarray         # (batch,)


def forward(params: NetworkParams, spec: ArchitectureSpec, x, mode: str = "infer",
            rng: np.random.Generator | None = None) -> ForwardTrace:
    """Run the network. In train mode, inverted dropout scales kept units by
    1/(1-rate) so inference needs no rescaling; masks are drawn from `rng`."""
    if mode not in ("train", "infer"):
        raise ConfigError(f"mode must be train or infer, got {mode!r}")
    if mode == "train" and rng is None and any(r > 0 for r in spec.dropout):
        raise ConfigError("train-mode forward with dropout needs an rng")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = x.reshape(1, -1) if squeeze else x
    if a.shape[1] != spec.input_dim:
        raise ShapeMismatch(f"input width {a.shape[1]} != expected {spec.input_dim}")
    if params.n_layers != spec.m:
        raise ShapeMismatch("params layer count does not match architecture")

    pre, acts, raw, masks = [], [], [], []
    inputs = a
    for i in range(spec.m - 1):
        z = a @ params.weights[i].T + params.biases[i]
        h = _activate(spec.activations[i], z)
        raw.append(h)
        rate = spec.dropout[i]
        if mode == "train" and rate > 0.0:
            keep = 1.0 - rate
            mask = (rng.random(h.shape) < keep).astype(np.float64) / keep
            h = h * mask
        else:
            mask = None
        pre.append(z)
        acts.append(h)
        masks.append(mask)
        a = h
    out = a @ params.weights[-1].T + params.biases[-1]
    return ForwardTrace(inputs=inputs, pre_activations=pre, activations=acts,
                        raw_activations=raw, masks=masks, output=out[:, 0])


def backward(params: NetworkParams, spec: ArchitectureSpec, trace: ForwardTrace,
             upstream) -> NetworkParams:
    """Exact gradients of sum(upstream * output) w.r.t. every weight and bias.

    `upstream` is dLoss/dOutput, a scalar or per-sample vector; batch
    contributions are summed. Dropout masks stored in the trace are respected.
    """
    n = len(trace.output)
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 0:
        up = np.full(n, float(up))
    if up.shape != (n,):
        raise ShapeMismatch(f"upstream shape {up.shape} != ({n},)")

    m = spec.m
    gw = [None] * m
    gb = [None] * m

    def layer_input(i):
        return trace.inputs if i == 0 else trace.activations[i - 1]

    delta = up[:, None]                                   # output layer is affine
    gw[m - 1] = delta.T @ layer_input(m - 1)
    gb[m - 1] = delta.sum(axis=0)
    d = delta @ params.weights[m - 1]
    for i in range(m - 2, -1, -1):
        if trace.masks[i] is not None:
            d = d * trace.masks[i]
        dz = d * _activate_grad(spec.activations[i], trace.pre_activations[i],
                                trace.raw_activations[i])
        gw[i] = dz.T @ layer_input(i)
        gb[i] = dz.sum(axis=0)
        if i > 0:
            d = dz @ params.weights[i]
    return NetworkParams(gw, gb)


# ---------------------------------------------------------------------------
# Gradient checking


@dataclass
class GradientCheckReport:
    max_rel_error: float
    n_params: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def gradient_check(spec: ArchitectureSpec, seed: int, tolerance: float = 1e-4,
                   step: float = 1e-5, corrupt: bool = False) -> GradientCheckReport:
    """Compare analytic gradients against central finite differences on a
    random input. Dropout must be off (the map has to be deterministic).
    `corrupt` injects +1e-2 into one weight gradient, for self-test plumbing.
    """
    if any(r > 0 for r in spec.dropout):
        raise ConfigError("gradient_check requires dropout 0 on every layer")
    if spec.n_params > 10_000:
        raise ConfigError("gradient_check is meant for small networks (<= 1e4 params)")
    params = init_params(spec, seed)
    x = np.random.default_rng([seed, 3271]).standard_normal(spec.input_dim)
    analytic = backward(params, spec, forward(params, spec, x), 1.0)
    if corrupt:
        analytic.weights[0][0, 0] += 1e-2

    def out_at():
        return float(forward(params, spec, x).output[0])

    max_rel = 0.0
    count = 0
    for arrs, grads in ((params.weights, analytic.weights), (params.biases, analytic.biases)):
        for arr, grad in zip(arrs, grads):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + step
                up = out_at()
                flat[j] = orig - step
                down = out_at()
                flat[j] = orig
                numeric = (up - down) / (2.0 * step)
                a = gflat[j]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                if rel > max_rel:
                    max_rel = rel
                count += 1
    return GradientCheckReport(max_rel_error=max_rel, n_params=count, tolerance=tolerance)


# ---------------------------------------------------------------------------
# Checkpoint serialization (canonical JSON; floats round-trip bit-exactly)


def params_to_json(params: NetworkParams) -> list:
    return [{"w": w.tolist(), "b": b.tolist()}
            for w, b in zip(params.weights, params.biases)]


def params_from_json(layers: list) -> NetworkParams:
    weights = [np.asarray(layer["w"], dtype=np.float64) for layer in layers]
    biases = [np.asarray(layer["b"], dtype=np.float64) for layer in layers]
    return NetworkParams(weights, biases)


def checkpoint_bytes(payload: dict) -> bytes:
    return (json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def save_checkpoint(path, payload: dict) -> None:
    payload = dict(payload)
    payload["format"] = CHECKPOINT_FORMAT
    payload["version"] = CHECKPOINT_VERSION
    Path(path).write_bytes(checkpoint_bytes(payload))


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingCheckpoint(f"checkpoint {path} does not exist")
    obj = json.loads(path.read_text(encoding="utf-8"))
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {obj.get('version')}")
    return obj
