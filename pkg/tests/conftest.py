import sys
from pathlib import Path

import numpy as np
import pytest
import torch

# Make the `app` package importable the way ascal/main.py sees it
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "ascal"))

from app.models.config import ContrastiveConfig, EncoderConfig, EvalConfig, PretrainConfig
from app.models.skeleton import DataShape, SkeletonSequence, SyntheticSpec
from app.services.skeleton_service import generate_synthetic, normalize_dataset


@pytest.fixture
def tiny_shape():
    return DataShape(T=6, M=1, J=3, center_joint=0, classes=2)


@pytest.fixture
def make_sequence():
    """Factory for random sequences with optional zero padding"""
    def _make(T=6, M=1, J=3, valid=None, seed=0, scale=1.0):
        valid = T if valid is None else valid
        coords = np.zeros((T, M, J, 3))
        coords[:valid] = np.random.default_rng(seed).normal(0.0, scale, (valid, M, J, 3))
        return SkeletonSequence(coords=coords, valid_frames=valid)
    return _make


@pytest.fixture(scope="session")
def tiny_spec():
    return SyntheticSpec(
        class_count=2, sequences_per_class=8, noise_std=0.02, seed=3,
        shape=DataShape(T=8, M=1, J=4, center_joint=0, classes=2),
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec):
    """16 centered sequences, 2 classes, T=8, J=4"""
    return normalize_dataset(generate_synthetic(tiny_spec))


@pytest.fixture
def tiny_pretrain_config():
    return PretrainConfig(
        epochs=2,
        lr=0.01,
        seed=0,
        encoder=EncoderConfig(hidden_size=6, layers=1),
        contrastive=ContrastiveConfig(queue_size=8, batch_size=4, temperature=0.5, momentum=0.9),
    )


@pytest.fixture
def tiny_eval_config():
    return EvalConfig(epochs=20, batch_size=None, seed=0)


@pytest.fixture(autouse=True)
def mock_environment(monkeypatch, tmp_path):
    """Keep runs and thread settings local to each test"""
    monkeypatch.setenv("ASCAL_RUNS_DIR", str(tmp_path / "runs"))
    monkeypatch.setenv("LOG_LEVEL", "WARNING")
    monkeypatch.delenv("ASCAL_WORKERS", raising=False)
    torch.set_num_threads(1)
