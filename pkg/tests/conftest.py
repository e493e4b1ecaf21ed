"""Shared small datasets and trained models (session-scoped, seconds to build)."""

import numpy as np
import pytest

from waveform_adv import data, nn


@pytest.fixture(scope="session")
def mod_data():
    ds = data.gen_modulation_dataset(slices_per_cell=500, n_i=128, seed=11)
    train, rest = data.split(ds, (0.7, 0.3), seed=0)
    opt, test = data.split(rest, (0.5, 0.5), seed=1)
    return ds, train, opt, test


@pytest.fixture(scope="session")
def mod_model(mod_data):
    _, train, _, _ = mod_data
    model = nn.modulation_surrogate(train.classes, 128, depth=2, filters=16, dense=32, seed=0)
    model, _ = nn.train(model, train, nn.TrainConfig(epochs=15, lr=3e-3, batch=32, seed=0))
    return model


@pytest.fixture(scope="session")
def fp_data():
    ds = data.gen_fingerprint_dataset(3, slices_per_device=800, n_i=96, seed=5)
    train, rest = data.split(ds, (0.7, 0.3), seed=0)
    opt, test = data.split(rest, (0.5, 0.5), seed=1)
    return ds, train, opt, test


@pytest.fixture(scope="session")
def fp_model(fp_data):
    _, train, _, _ = fp_data
    model = nn.fingerprint_surrogate(train.classes, 96, filters=8, dense=(32, 16), seed=0)
    model, _ = nn.train(model, train, nn.TrainConfig(epochs=20, lr=3e-3, batch=32, seed=0))
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
