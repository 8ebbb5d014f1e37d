from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from modrobe.config import ExperimentConfig, GenConfig, ModelConfig, SweepPlanConfig, TrainConfig
from modrobe.datagen import generate
from modrobe.optim import AdamWConfig
from modrobe.trainer import linear_probe, pretrain

FIXTURES_DIR = Path(__file__).resolve().parent.parent / "fixtures"


def tiny_gen_config(**overrides) -> GenConfig:
    base = GenConfig(
        modalities=("m0", "m1", "m2"),
        latent_dim=4,
        token_counts=(4, 4, 4),
        token_dims=(5, 5, 5),
        noise=(0.1, 0.3, 0.5),
        num_classes=3,
        pretrain_size=64,
        train_size=48,
        eval_size=40,
        self_distill_size=16,
        seed=3,
    )
    return replace(base, **overrides)


def tiny_experiment_config(**overrides) -> ExperimentConfig:
    base = ExperimentConfig(
        data=tiny_gen_config(),
        model=ModelConfig(hidden=8, embed_dim=6, decoder_hidden=8),
        pretrain=TrainConfig(method="contrastive", epochs=2, batch_size=16, warmup_steps=2),
        probe=TrainConfig(
            method="probe", epochs=2, batch_size=16, optimizer=AdamWConfig(lr=5e-3, weight_decay=0.0), warmup_steps=1
        ),
        finetune=TrainConfig(method="finetune", epochs=2, batch_size=16, optimizer=AdamWConfig(lr=3e-4), warmup_steps=1),
        plan=SweepPlanConfig(methods=("probe", "finetune", "masd", "wiseft")),
        seed=11,
    )
    return replace(base, **overrides)


def random_params(rng: np.random.Generator, shapes: dict) -> dict:
    return {name: rng.standard_normal(shape) for name, shape in shapes.items()}


@pytest.fixture(scope="session")
def tiny_config() -> ExperimentConfig:
    return tiny_experiment_config()


@pytest.fixture(scope="session")
def tiny_bundle(tiny_config):
    return generate(tiny_config.data)


@pytest.fixture(scope="session")
def backbone(tiny_bundle, tiny_config):
    return pretrain(tiny_bundle, tiny_config.phase("pretrain"), tiny_config.model)


@pytest.fixture(scope="session")
def probe_for(tiny_bundle, tiny_config, backbone):
    cache = {}

    def build(train_set):
        if train_set.label not in cache:
            cache[train_set.label] = linear_probe(backbone, tiny_bundle.train, train_set, tiny_config.phase("probe"))
        return cache[train_set.label]

    return build
