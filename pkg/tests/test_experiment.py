from dataclasses import replace

import numpy as np
import pytest

from modrobe.config import load_experiment_config
from modrobe.datagen import generate
from modrobe.pipeline import CheckpointStore, SweepPlan, run_sweep
from modrobe.robustness import aggregate

SEEDS = (0, 1, 2)


def _sweep(seed, root):
    config = load_experiment_config(None, [f"seed={seed}", f"data.seed={seed}"])
    config = replace(config, plan=replace(config.plan, methods=("probe", "finetune", "masd")))
    bundle = generate(config.data)
    plan = SweepPlan.from_config(bundle.universe, config.plan)
    return run_sweep(plan, bundle, config, CheckpointStore(root / f"seed-{seed}"), parallel=4).matrices


@pytest.fixture(scope="module")
def sweeps(tmp_path_factory):
    root = tmp_path_factory.mktemp("experiment")
    return [_sweep(seed, root) for seed in SEEDS]


@pytest.mark.slow
def test_finetune_beats_probe_overall(sweeps):
    """기본 합성 데이터에서 fine-tune 전체 P ≥ linear probe 전체 P (seed 평균)"""
    finetune = np.mean([aggregate(s["finetune"], "overall").performance for s in sweeps])
    probe = np.mean([aggregate(s["probe"], "overall").performance for s in sweeps])
    assert finetune >= probe


@pytest.mark.slow
def test_masd_improves_transfer_robustness(sweeps):
    """MASD 의 transfer R 이 fine-tune 보다 큼 (seed 평균)"""
    masd = np.mean([aggregate(s["masd"], "transfer").robustness for s in sweeps])
    finetune = np.mean([aggregate(s["finetune"], "transfer").robustness for s in sweeps])
    assert masd > finetune


@pytest.mark.slow
def test_matched_size_performance_is_nondecreasing(sweeps):
    """|M_T| = |M_E| = k 의 성능은 k 에 대해 감소하지 않음 (seed 과반)"""
    votes = 0
    for sweep in sweeps:
        values = [aggregate(sweep["finetune"], f"matched-{k}").performance for k in (1, 2, 3)]
        votes += all(a <= b for a, b in zip(values, values[1:]))
    assert votes >= 2
