"""Fast internal consistency checks behind the `selfcheck` CLI command.

Covers gradient fidelity against finite differences, calendar one-hot
properties, MAPE arithmetic, and an overfit smoke test on a tiny synthetic
fixture. Everything is seeded, so repeated runs print the same summary.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .dataset import ShockSchedule, SyntheticSpec, generate_synthetic
from .features import SampleSet, build_samples, decode_calendar, encode_calendar, fit_normalizer
from .neuralnet import ArchitectureSpec, init_params, gradient_check
from .training import TrainingConfig, mape, train_single
from .util import DateSpan, from_hour_epoch


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def check_gradients(inject_fault: bool = False) -> CheckResult:
    specs = [
        ArchitectureSpec((7, 12, 8, 1), ("relu", "relu"), (0.0, 0.0), 1),
        ArchitectureSpec((5, 10, 6, 4, 1), ("sigmoid", "relu", "sigmoid"), (0.0,) * 3, 2),
        ArchitectureSpec((6, 8, 1), ("linear",), (0.0,), 1),
    ]
    worst = 0.0
    for i, spec in enumerate(specs):
        report = gradient_check(spec, seed=41 + i, tolerance=1e-4,
                                corrupt=inject_fault and i == 0)
        worst = max(worst, report.max_rel_error)
    return CheckResult("gradient_check", worst < 1e-4,
                       f"max relative error {worst:.3e} (tolerance 1e-4)")


def random_timestamps(n: int, seed: int) -> list:
    """Seeded random UTC instants spread over several years."""
    rng = np.random.default_rng(seed)
    hours = rng.integers(350_000, 470_000, size=n)     # ~1990..2023
    return [from_hour_epoch(int(h)) for h in hours]


def check_calendar_encoding(n: int = 1000, seed: int = 5) -> CheckResult:
    holidays = {datetime(2020, 7, 4, tzinfo=timezone.utc).date()}
    bad = 0
    for ts in random_timestamps(n, seed):
        block = encode_calendar(ts, holidays)
        sums = (block[:24].sum(), block[24:36].sum(), block[36:38].sum(), block[38:40].sum())
        decoded = decode_calendar(block)
        ok = (
            sums == (1.0, 1.0, 1.0, 1.0)
            and decoded["hour"] == ts.hour
            and decoded["month"] == ts.month
            and decoded["weekend"] == (ts.weekday() >= 5)
            and decoded["holiday"] == (ts.date() in holidays)
        )
        bad += 0 if ok else 1
    return CheckResult("calendar_encoding", bad == 0,
                       f"{n - bad}/{n} random timestamps round-trip")


def check_mape_cases() -> CheckResult:
    cases = [
        (mape([1.0, 2.0], [1.0, 2.0]), 0.0),
        (mape([1.1], [1.0]), 10.0),
        (mape([0.55, 0.2], [0.5, 0.25]), 15.0),
    ]
    worst = max(abs(got - want) for got, want in cases)
    return CheckResult("mape_arithmetic", worst < 1e-9,
                       f"max deviation {worst:.2e} on hand-checked cases")


def overfit_fixture() -> tuple[SampleSet, ArchitectureSpec, TrainingConfig]:
    """64 noiseless synthetic samples plus a small net that can memorize them."""
    spec = SyntheticSpec(n_regions=1, days=40, seed=7, noise_std=0.0,
                         shock=ShockSchedule(start_day=39, depth=0.0),
                         mobility_noise=0.5)
    regions, _ = generate_synthetic(spec)
    series = regions[0]
    span = DateSpan(spec.start, series.timestamps[-1].date())
    norm = fit_normalizer(series, span)
    data = build_samples(series, norm, history_hours=6, with_mobility=True,
                         span=span, issue_stride_hours=11)
    keep = np.flatnonzero(data.targets >= 0.15)[:64]
    subset = SampleSet(task_id=data.task_id, layout=data.layout,
                       inputs=data.inputs[keep], targets=data.targets[keep],
                       issue_hours=data.issue_hours[keep], horizons=data.horizons[keep])
    arch = ArchitectureSpec.standard(subset.width, hidden=(32, 16), dropout=0.0,
                                     trunk_depth=1)
    config = TrainingConfig(batch_size=32, epochs=500, learning_rate=3e-3, seed=3)
    return subset, arch, config


def check_overfit() -> CheckResult:
    data, arch, config = overfit_fixture()
    params = init_params(arch, seed=17)
    _, log = train_single(params, arch, data, config)
    final = log.rows[-1][2]
    return CheckResult("overfit_smoke", final < 1.0,
                       f"training MAPE {final:.3f}% after {config.epochs} epochs "
                       f"on {data.n} samples (target < 1%)")


def run_selfcheck(inject_gradient_fault: bool = False) -> tuple[bool, list]:
    checks = [
        check_gradients(inject_fault=inject_gradient_fault),
        check_calendar_encoding(),
        check_mape_cases(),
        check_overfit(),
    ]
    return all(c.passed for c in checks), [c.line() for c in checks]
