"""Shared fixtures: tiny architectures, seeded generators, synthetic motion."""

import numpy as np
import pytest

from tools.hs2sae import ArchConfig, TrainConfig, init_params
from tools.motiondata import MotionSequence, compute_norm_stats, normalize, synth_motion

TINY = dict(T=4, tau=2, latent_dim=8, features=4, sub_hidden=6, dec_hidden=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return ArchConfig(**TINY)


@pytest.fixture
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg, np.random.default_rng(7))


@pytest.fixture
def tiny_train_config():
    return TrainConfig(lr0=1e-3, epochs=2, batch=4, samples_per_epoch=8, folds=2, val_samples=4, seed=3)


@pytest.fixture
def synthetic_sequences():
    """Raw sine sequences of both families, 4 channels, 40 frames."""
    return [synth_motion(family, 4, 40, seed) for family in ("sine_walk", "sine_sit") for seed in range(3)]


@pytest.fixture
def normalized(synthetic_sequences):
    """(normalized sequences, stats) of the synthetic fixture."""
    stats = compute_norm_stats(synthetic_sequences)
    return [normalize(s, stats) for s in synthetic_sequences], stats


@pytest.fixture
def random_stats(rng):
    """zscore statistics of 9 random channels (all kept)."""
    return compute_norm_stats([MotionSequence(rng.normal(size=(80, 9)), 25.0)])
