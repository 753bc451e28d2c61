import numpy as np
import pytest

from rmvl.config import DatasetConfig
from rmvl.corpus import DatasetManifest, synthesize_dataset

SMALL_DATASET = DatasetConfig(clips=12, frames=48, classes=4, height=32,
                              width=32, joints=6, sigma=1.2, seed=3)


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory) -> DatasetManifest:
    """A 32x32 corpus shared by the unit tests."""
    root = tmp_path_factory.mktemp("corpus")
    return synthesize_dataset(SMALL_DATASET, root)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
