import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from synthfaces import make_face, write_dataset  # noqa: E402

from dicfsr.data import load_samples  # noqa: E402


@pytest.fixture(autouse=True)
def _seed_everything():
    np.random.seed(0)
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def face_dataset(tmp_path_factory):
    """Small synthetic dataset: 4 train + 2 test faces with landmarks."""
    root = tmp_path_factory.mktemp("faces")
    manifest = write_dataset(root, n_train=4, n_test=2, seed=7)
    return manifest


@pytest.fixture(scope="session")
def train_samples(face_dataset):
    return load_samples(face_dataset, "train")


@pytest.fixture(scope="session")
def test_samples(face_dataset):
    return load_samples(face_dataset, "test")


@pytest.fixture(scope="session")
def one_face():
    """One (image, landmarks) pair on the raw canvas."""
    return make_face(123)
