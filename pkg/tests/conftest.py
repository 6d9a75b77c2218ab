# tests/conftest.py → Shared fixtures
# Small corpora and configs sized so every model trains in a second or two.

import numpy as np
import pytest

from models import (DiffusionConfig, GanConfig, KernelConfig, MlpClassifierConfig, ToyCorpusSpec,
                    VaeConfig)
from modules.corpus import make_toy_corpus, stratified_split


def peak(d: int, position: int, height: float = 1.0) -> np.ndarray:
    x = np.zeros(d)
    x[position] = height
    return x


@pytest.fixture
def single_peak():
    return peak


@pytest.fixture
def kernel():
    return KernelConfig(t=8.0)


@pytest.fixture
def toy_spec():
    return ToyCorpusSpec(num_classes=3, per_class=30, bins=48, peaks_per_class=4, seed=17)


@pytest.fixture
def toy_corpus(toy_spec):
    return make_toy_corpus(toy_spec)


@pytest.fixture
def toy_splits(toy_corpus):
    train, val, test = stratified_split(toy_corpus, [0.6, 0.2, 0.2], seed=17)
    return train, val, test


@pytest.fixture
def vae_cfg():
    return VaeConfig(arch="mlp", latent_dim=2, hidden=[16, 12, 8], embedding_dim=3,
                     batch=32, max_epochs=2, patience=2)


@pytest.fixture
def gan_cfg():
    return GanConfig(arch="mlp", latent_dim=4, hidden=[8, 12, 16], batch=32, max_epochs=2, patience=2,
                     val_samples=16, collapse_samples=8)


@pytest.fixture
def diffusion_cfg():
    return DiffusionConfig(T=10, unet_variant="Deep-micro", time_embedding_dim=8, batch=32,
                           max_epochs=1, patience=1)


@pytest.fixture
def classifier_cfg():
    return MlpClassifierConfig(hidden=[16], max_epochs=30, patience=30, lr=1e-2, batch=32)


@pytest.fixture
def trend_vae_cfg():
    """Long enough for generated classes to separate; used by the slow trend runs."""
    return VaeConfig(arch="mlp", latent_dim=4, hidden=[64, 32, 16], embedding_dim=4, batch=16,
                     max_epochs=150, patience=20, lr=3e-3)


@pytest.fixture
def trend_gan_cfg():
    return GanConfig(arch="mlp", latent_dim=8, hidden=[32, 64, 64], batch=32, max_epochs=60, patience=60,
                     lr_d=5e-4, lr_g=1e-3, val_samples=64)
