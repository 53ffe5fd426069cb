import os

import numpy as np
import pytest
import torch

from utility_ir.config import build_config
from utility_ir.imaging import save_image
from utility_ir.restore_net import UtilityIR
from utility_ir.weather_synth import generate_corpus, make_clean_scenes


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains a small model; minutes on CPU")


TINY = {
    "crop_size": 16,
    "batch_size": 2,
    "stage1_epochs": 2,
    "stage2_epochs": 1,
    "steps_per_epoch": 2,
    "decay_start_epoch": 1,
    "dim": 16,
    "blocks": 2,
    "heads": 2,
    "encoder_widths": (8, 8, 16),
    "log_every": 1,
}


@pytest.fixture
def tiny_config():
    return build_config(TINY)


@pytest.fixture
def tiny_model():
    torch.manual_seed(0)
    return UtilityIR(dim=16, downsample=4, blocks=2, heads=2, encoder_widths=(8, 8, 16))


def jitter(model: torch.nn.Module, scale: float = 0.05, seed: int = 0) -> torch.nn.Module:
    """Perturb every parameter so zero-initialized layers stop being identities"""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for parameter in model.parameters():
            parameter.add_(scale * torch.randn(parameter.shape, generator=generator, dtype=parameter.dtype))
    return model


def write_corpus(root, kinds=("haze", "rain_streak"), scenes=4, size=32, per_kind=2, seed=0):
    clean_dir = os.path.join(root, "clean")
    for index, scene in enumerate(make_clean_scenes(scenes, size, seed)):
        save_image(os.path.join(clean_dir, f"scene_{index:04d}.png"), scene)
    return generate_corpus(clean_dir, os.path.join(root, "corpus"), {kind: per_kind for kind in kinds}, seed=seed)


@pytest.fixture
def corpus(tmp_path):
    return write_corpus(str(tmp_path))


@pytest.fixture
def gray():
    return np.full((32, 32, 3), 0.5, dtype=np.float32)


@pytest.fixture(name="write_corpus")
def write_corpus_fixture():
    return write_corpus


@pytest.fixture(name="jitter")
def jitter_fixture():
    return jitter
