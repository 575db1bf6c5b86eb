"""Shared fixtures: a small synthetic multi-region experiment setup."""

from datetime import timedelta

import pytest

from mobiload.dataset import (
    DatasetManifest,
    RegionEntry,
    ShockSchedule,
    SyntheticSpec,
    generate_synthetic,
)
from mobiload.evaluation import ExperimentConfig
from mobiload.training import TrainingConfig
from mobiload.util import DateSpan


def small_manifest(spec: SyntheticSpec, nn_orig=(0, 64), train=(70, 89), test=(90, 99),
                   mtl_groups=None):
    """A manifest over in-memory synthetic regions (entries carry no paths)."""
    day = lambda d: spec.start + timedelta(days=d)
    span = DateSpan(spec.start, day(spec.days - 1))
    regions = [RegionEntry(f"r{i}", "UTC", None, [], [], None)
               for i in range(spec.n_regions)]
    return DatasetManifest(
        span=span,
        train=DateSpan(day(train[0]), day(train[1])),
        test=DateSpan(day(test[0]), day(test[1])),
        nn_orig_train=DateSpan(day(nn_orig[0]), day(nn_orig[1])),
        mtl_groups=mtl_groups if mtl_groups is not None
        else [[r.region_id for r in regions]] if len(regions) > 1 else [],
        regions=regions,
    )


def fast_config(seed=0, **kw):
    defaults = dict(
        hidden=(24, 16, 12),
        activation="relu",
        dropout=0.0,
        trunk_depth=2,
        history_hours=6,
        training=TrainingConfig(batch_size=128, epochs=12, learning_rate=3e-3,
                                fine_tune_epochs=2),
        issue_stride_hours=6,
        nn_orig_issue_stride_hours=12,
        nn_orig_epochs=12,
        seed=seed,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


@pytest.fixture(scope="session")
def shock_fixture():
    """2 regions, 100 days, mobility collapse at day 80; splits around it."""
    spec = SyntheticSpec(n_regions=2, days=100, seed=42, noise_std=0.01,
                         shock=ShockSchedule(start_day=80, depth=0.4,
                                             recovery_slope=0.5),
                         shock_jitter=0.3)
    regions, truth = generate_synthetic(spec)
    series_by_region = {s.region_id: s for s in regions}
    manifest = small_manifest(spec)
    return manifest, series_by_region, truth, spec
