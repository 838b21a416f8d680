"""Shared fixtures: tiny model configs and a small generated dataset"""

from fractions import Fraction

import numpy as np
import pytest

from beamcast.airsim import CameraConfig, RadioConfig, SceneConfig, generate_dataset, write_dataset
from beamcast.beamnet import ModelConfig
from beamcast.harness import TrainConfig

TINY_BEAMS = 4
TINY_IMAGE = 16


@pytest.fixture(autouse=True)
def _reference_mode(monkeypatch):
    """Single-threaded everywhere so results are bit-reproducible"""
    monkeypatch.setenv("BEAMCAST_REFERENCE", "1")


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(
        image_size=TINY_IMAGE,
        conv_channels=(4, 8, 12, 16),
        embed_dim=16,
        num_heads=2,
        num_encoder_layers=2,
        num_beams=TINY_BEAMS,
        dropout=0.0,
        scale_factor=Fraction(1),
    )


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=8, lr=1e-3, milestones=(1,), eval_every=1)


@pytest.fixture(scope="session")
def small_radio() -> RadioConfig:
    return RadioConfig(num_antennas=4, num_subcarriers=4, num_beams=TINY_BEAMS)


@pytest.fixture(scope="session")
def small_dataset(small_radio):
    scene = SceneConfig(samples_per_flight=8)
    return generate_dataset(48, scene, small_radio, CameraConfig(image_size=TINY_IMAGE), seed=3, workers=1)


@pytest.fixture
def dataset_dir(tmp_path, small_dataset):
    return write_dataset(tmp_path / "data", small_dataset)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
