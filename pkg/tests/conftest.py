import os

import pytest

from kdsr.codebook import QuantizerKind
from kdsr.config import (
    BackboneConfig,
    EvalConfig,
    StudentConfig,
    TeacherConfig,
    TrainConfig,
    TrainerConfig,
)
from kdsr.corpus import SyntheticSpec, generate_synthetic, split_train_test


def pytest_collection_modifyitems(config, items):
    if os.environ.get("KDSR_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set KDSR_SLOW=1 to run acceptance runs")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_spec(seed: int = 7) -> SyntheticSpec:
    return SyntheticSpec(
        items=30,
        users=60,
        min_length=4,
        max_length=8,
        colors=2,
        shapes=2,
        categories=3,
        brands=2,
        modality_dim=16,
        seed=seed,
    )


def tiny_config(seed: int = 3, epochs: int = 2) -> TrainConfig:
    return TrainConfig(
        teacher=TeacherConfig(
            ae_epochs=30,
            ae_lr=0.01,
            splits=2,
            codes=4,
            quantizer=QuantizerKind.KMEANS,
            kmeans_iters=10,
            codebook_sample=2000,
        ),
        student=StudentConfig(pair_cap=16),
        backbone=BackboneConfig(dim=8, window=3, max_length=10, heads=2, layers=1),
        trainer=TrainerConfig(epochs=epochs, batch_size=16, lr=0.01, async_epochs=2),
        eval=EvalConfig(drift_pairs=50, threads=1),
        seed=seed,
    )


@pytest.fixture
def tiny_corpus():
    """(split, modalities) for a 30-item synthetic corpus."""
    ds, modalities = generate_synthetic(tiny_spec(), core_k=2)
    return split_train_test(ds), modalities


@pytest.fixture
def small_config():
    return tiny_config()
