"""MAPE-loss minibatch training, multi-task co-training, and fine-tuning.

The loss is mean absolute percentage error over a batch with an epsilon floor
on the denominator (normalized targets can sit arbitrarily close to 0). The
multi-task trainer shares trunk layers across tasks: each round it samples one
batch per task, computes every task's gradients at the round-start parameters,
then applies one trunk update per task (fixed order) and one update per head.
Computing gradients at the round snapshot is what makes two identical tasks
receive identical head updates, a contract the tests rely on.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyInput,
    NonFiniteLoss,
    UnknownTask,
)
from .features import SampleSet
from .neuralnet import (
    ArchitectureSpec,
    NetworkParams,
    backward,
    forward,
    init_params,
)


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    mape_epsilon: float = 1e-3
    fine_tune_epochs: int = 10
    fine_tune_learning_rate: float | None = None   # None: reuse learning_rate

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.mape_epsilon <= 0:
            raise ConfigError("mape_epsilon must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.fine_tune_epochs < 0:
            raise ConfigError("fine_tune_epochs must be >= 0")
        if self.fine_tune_learning_rate is not None and self.fine_tune_learning_rate < 0:
            raise ConfigError("fine_tune_learning_rate must be >= 0")

    def to_json(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "mape_epsilon": self.mape_epsilon,
            "fine_tune_epochs": self.fine_tune_epochs,
            "fine_tune_learning_rate": self.fine_tune_learning_rate,
        }


# ---------------------------------------------------------------------------
# Loss


def mape(predictions, targets, epsilon: float = 1e-3) -> float:
    """Percent error (100/N) * sum |pred - target| / max(target, epsilon)."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.size == 0:
        raise EmptyInput("mape needs at least one element")
    if p.shape != t.shape:
        raise DimensionMismatch(f"predictions {p.shape} vs targets {t.shape}")
    if not np.all(np.isfinite(t)):
        raise DimensionMismatch("targets must be finite")
    denom = np.maximum(t, epsilon)
    return float(100.0 * np.mean(np.abs(p - t) / denom))


def _mape_upstream(preds: np.ndarray, targets: np.ndarray, epsilon: float) -> np.ndarray:
    """d(batch MAPE)/d(pred_i); sign(0) is 0 so exact hits get no push."""
    denom = np.maximum(targets, epsilon)
    return 100.0 * np.sign(preds - targets) / (denom * len(targets))


# ---------------------------------------------------------------------------
# Optimizers


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: NetworkParams, grads: NetworkParams, layers) -> None:
        for i in layers:
            params.weights[i] -= self.lr * grads.weights[i]
            params.biases[i] -= self.lr * grads.biases[i]


class _Adam:
    """Adaptive-moment SGD; state is kept per layer and only for layers
    actually updated, so frozen layers stay bit-identical."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: NetworkParams, grads: NetworkParams, layers) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i in layers:
            for kind, arr, g in (("w", params.weights[i], grads.weights[i]),
                                 ("b", params.biases[i], grads.biases[i])):
                key = (i, kind)
                if key not in self.m:
                    self.m[key] = np.zeros_like(arr)
                    self.v[key] = np.zeros_like(arr)
                m = self.m[key]
                v = self.v[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * np.square(g)
                arr -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _make_optimizer(config: TrainingConfig):
    if config.optimizer == "sgd":
        return _Sgd(config.learning_rate)
    return _Adam(config.learning_rate)


# ---------------------------------------------------------------------------
# Training log


@dataclass
class TrainingLog:
    """Per-epoch training MAPE rows (epoch, task_id, mape) plus run metadata."""

    rows: list = field(default_factory=list)
    wall_time_s: float = 0.0
    config: TrainingConfig | None = None

    def add(self, epoch: int, task_id: str, value: float) -> None:
        self.rows.append((epoch, task_id, value))

    def task_series(self, task_id: str) -> list:
        return [v for _, t, v in self.rows if t == task_id]

    def csv_lines(self) -> list:
        lines = ["epoch,task_id,train_mape"]
        lines += [f"{e},{t},{repr(v)}" for e, t, v in self.rows]
        return lines


# ---------------------------------------------------------------------------
# Single-task training


def _check_data(spec: ArchitectureSpec, data: SampleSet) -> None:
    if data.n == 0:
        raise EmptyInput("training data is empty")
    if data.width != spec.input_dim:
        raise DimensionMismatch(
            f"data width {data.width} != model input dim {spec.input_dim}")


def _epoch_mape(params, spec, data: SampleSet, epsilon: float) -> float:
    preds = forward(params, spec, data.inputs).output
    denom = np.maximum(data.targets, epsilon)
    return float(100.0 * np.mean(np.abs(preds - data.targets) / denom))


def train_single(params: NetworkParams, spec: ArchitectureSpec, data: SampleSet,
                 config: TrainingConfig, trainable=None,
                 task_id: str | None = None):
    """Minibatch-train `params` in place; returns (params, TrainingLog).

    Each epoch reshuffles the data with a seeded permutation and performs
    ceil(n / batch_size) updates. `trainable` restricts updates to the given
    layer indices (used by fine-tuning); all other layers stay untouched.
    Divergence raises NonFiniteLoss with the last finite epoch restored.
    """
    _check_data(spec, data)
    task = task_id if task_id is not None else data.task_id
    layers = list(range(spec.m)) if trainable is None else sorted(trainable)
    opt = _make_optimizer(config)
    log = TrainingLog(config=config)
    started = time.perf_counter()
    snapshot = params.copy()

    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, 11, epoch]).permutation(data.n)
        drop_rng = np.random.default_rng([config.seed, 13, epoch])
        for lo in range(0, data.n, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            trace = forward(params, spec, data.inputs[batch], mode="train", rng=drop_rng)
            if not np.all(np.isfinite(trace.output)):
                snapshot.copy_into(params)
                log.wall_time_s = time.perf_counter() - started
                raise NonFiniteLoss(
                    f"{task}: non-finite predictions in epoch {epoch}",
                    params=params, log=log)
            upstream = _mape_upstream(trace.output, data.targets[batch], config.mape_epsilon)
            grads = backward(params, spec, trace, upstream)
            opt.step(params, grads, layers)
        epoch_loss = _epoch_mape(params, spec, data, config.mape_epsilon)
        if not np.isfinite(epoch_loss):
            snapshot.copy_into(params)
            log.wall_time_s = time.perf_counter() - started
            raise NonFiniteLoss(f"{task}: non-finite training MAPE in epoch {epoch}",
                                params=params, log=log)
        log.add(epoch, task, epoch_loss)
        snapshot = params.copy()
    log.wall_time_s = time.perf_counter() - started
    return params, log


# ---------------------------------------------------------------------------
# Multi-task model


@dataclass
class MultiTaskModel:
    """One shared trunk (layers 1..l) plus per-task heads (layers l+1..m).

    The trunk arrays are single objects referenced by every composed view, so
    there is exactly one trunk to serialize no matter which task reads it.
    """

    spec: ArchitectureSpec
    trunk: NetworkParams
    heads: dict
    task_order: tuple
    layout_hashes: dict

    @property
    def trunk_layers(self) -> list:
        return list(range(self.spec.trunk_depth))

    @property
    def head_layers(self) -> list:
        return list(range(self.spec.trunk_depth, self.spec.m))

    def compose(self, task_id: str) -> NetworkParams:
        """Full network view for one task; arrays are shared, not copied."""
        if task_id not in self.heads:
            raise UnknownTask(f"unknown task {task_id!r}")
        head = self.heads[task_id]
        return NetworkParams(self.trunk.weights + head.weights,
                             self.trunk.biases + head.biases)


def init_multitask(spec: ArchitectureSpec, task_ids, layout_hashes: dict,
                   seed: int) -> MultiTaskModel:
    """Seeded init; every head starts from the same values, like replicating a
    freshly initialized single network per task."""
    task_ids = tuple(task_ids)
    if len(task_ids) < 2:
        raise ConfigError("multi-task model needs at least 2 tasks")
    if len(set(layout_hashes.get(t) for t in task_ids)) != 1:
        raise DimensionMismatch("all tasks in a group must share one feature layout")
    full = init_params(spec, seed)
    l = spec.trunk_depth
    trunk = NetworkParams(full.weights[:l], full.biases[:l])
    heads = {}
    for task in task_ids:
        heads[task] = NetworkParams([w.copy() for w in full.weights[l:]],
                                    [b.copy() for b in full.biases[l:]])
    return MultiTaskModel(spec=spec, trunk=trunk, heads=heads, task_order=task_ids,
                          layout_hashes=dict(layout_hashes))


def _task_schedule(n: int, target_len: int, rng: np.random.Generator) -> np.ndarray:
    """A permutation of the task's samples, extended with replacement draws so
    shorter tasks supply one batch per round."""
    sched = rng.permutation(n)
    if target_len > n:
        extra = rng.integers(0, n, size=target_len - n)
        sched = np.concatenate([sched, extra])
    return sched


def train_multitask(model: MultiTaskModel, datasets: dict, config: TrainingConfig):
    """Co-train the trunk and all heads; returns (model, TrainingLog).

    Rounds visit tasks in the model's fixed task order. Per-task RNG streams
    are seeded by (seed, epoch, task size), never by task position, so equal
    tasks see equal schedules.
    """
    if len(model.task_order) < 2:
        raise ConfigError("multi-task training needs at least 2 tasks")
    for task in model.task_order:
        if task not in datasets:
            raise UnknownTask(f"no dataset for task {task!r}")
        data = datasets[task]
        _check_data(model.spec, data)
        if data.layout_hash != model.layout_hashes[task]:
            raise DimensionMismatch(f"{task}: dataset layout does not match the model")

    spec = model.spec
    trunk_opt = _make_optimizer(config)
    head_opts = {task: _make_optimizer(config) for task in model.task_order}
    log = TrainingLog(config=config)
    started = time.perf_counter()
    n_max = max(datasets[t].n for t in model.task_order)
    rounds = -(-n_max // config.batch_size)
    composed = {task: model.compose(task) for task in model.task_order}
    snapshot = {task: composed[task].copy() for task in model.task_order}

    for epoch in range(config.epochs):
        schedules = {}
        for task in model.task_order:
            n = datasets[task].n
            rng = np.random.default_rng([config.seed, 11, epoch, n])
            schedules[task] = _task_schedule(n, rounds * config.batch_size
                                             if n < n_max else n, rng)
        for rnd in range(rounds):
            lo = rnd * config.batch_size
            grads = {}
            for task in model.task_order:
                batch = schedules[task][lo:lo + config.batch_size]
                if batch.size == 0:
                    continue
                data = datasets[task]
                drop_rng = np.random.default_rng([config.seed, 13, epoch, rnd])
                trace = forward(composed[task], spec, data.inputs[batch],
                                mode="train", rng=drop_rng)
                if not np.all(np.isfinite(trace.output)):
                    for task2 in model.task_order:
                        snapshot[task2].copy_into(composed[task2])
                    log.wall_time_s = time.perf_counter() - started
                    raise NonFiniteLoss(f"{task}: non-finite predictions in epoch {epoch}",
                                        params=model, log=log)
                upstream = _mape_upstream(trace.output, data.targets[batch],
                                          config.mape_epsilon)
                grads[task] = backward(composed[task], spec, trace, upstream)
            # all gradients were taken at the round-start parameters; now apply
            for task in model.task_order:
                if task not in grads:
                    continue
                trunk_opt.step(composed[task], grads[task], model.trunk_layers)
                head_opts[task].step(composed[task], grads[task], model.head_layers)
        for task in model.task_order:
            loss = _epoch_mape(composed[task], spec, datasets[task], config.mape_epsilon)
            if not np.isfinite(loss):
                for task2 in model.task_order:
                    snapshot[task2].copy_into(composed[task2])
                log.wall_time_s = time.perf_counter() - started
                raise NonFiniteLoss(f"{task}: non-finite training MAPE in epoch {epoch}",
                                    params=model, log=log)
            log.add(epoch, task, loss)
        snapshot = {task: composed[task].copy() for task in model.task_order}
    log.wall_time_s = time.perf_counter() - started
    return model, log


def fine_tune(model: MultiTaskModel, task_id: str, data: SampleSet,
              config: TrainingConfig):
    """Head-only training for one task; the trunk and every other head are
    untouched (bit-identical before and after). Returns (model, TrainingLog)."""
    if task_id not in model.heads:
        raise UnknownTask(f"unknown task {task_id!r}")
    if config.fine_tune_epochs == 0:
        return model, TrainingLog(config=config)
    net = model.compose(task_id)
    lr = (config.fine_tune_learning_rate if config.fine_tune_learning_rate is not None
          else config.learning_rate)
    ft_config = replace(config, epochs=config.fine_tune_epochs, learning_rate=lr,
                        seed=config.seed + 1)
    _, log = train_single(net, model.spec, data, ft_config,
                          trainable=model.head_layers, task_id=task_id)
    return model, log
