"""Full desk-scale runs; deselected by default, run with ``pytest -m slow``."""

import time
from pathlib import Path

import numpy as np
import pytest

from marginal_correspondence.config import ExperimentConfig
from marginal_correspondence.core import train
from marginal_correspondence.experiments import run_ablation, sweep_margin

SEEDS = (1, 2, 3, 4, 5)
SWEEP_CONF = Path(__file__).resolve().parent.parent / "configs" / "sweep.conf"
SWEEP_BUDGET_SECONDS = 15 * 60

pytestmark = pytest.mark.slow


@pytest.fixture
def sweep_config():
    return ExperimentConfig.from_file(SWEEP_CONF)


def test_margin_sweep_is_monotone(sweep_config):
    started = time.perf_counter()
    report = sweep_margin(sweep_config, margins=[0.0, 0.1, 0.2, 0.3, 0.4], seeds=SEEDS, workers=len(SEEDS))
    elapsed = time.perf_counter() - started

    top1 = [row.top1_mean for row in report.table]
    assert all(b >= a for a, b in zip(top1, top1[1:])), report.format()
    assert top1[-1] - top1[0] >= 0.02, report.format()
    assert elapsed < SWEEP_BUDGET_SECONDS, f"sweep took {elapsed:.0f} s"


def test_permuted_task_beats_chance(sweep_config):
    final = train(sweep_config.with_overrides(seed=1)).final
    assert final.top1_accuracy > 10.0 / sweep_config.num_positions


def test_scm_helps_on_shapes(sweep_config):
    config = sweep_config.with_overrides(task="shapes")
    report = run_ablation(config, margins=[0.4], seeds=SEEDS, workers=len(SEEDS))
    gain = report.row("+MCL(0.4)+SCM").top1_mean - report.row("+MCL(0.4)").top1_mean
    assert gain >= 0.02, report.format()


@pytest.mark.parametrize("seed", SEEDS)
def test_identity_task_is_solved(seed):
    config = ExperimentConfig(permute=False, jitter=False, seed=seed, log_every=2000)
    rows = train(config).rows
    assert np.isclose(rows[-1].top1_accuracy, 1.0)
