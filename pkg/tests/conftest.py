import numpy as np
import pytest

from etpa_ml.dataset import LevelBand, generate_dataset, save_dataset, with_split
from etpa_ml.physics import PhotonSource


@pytest.fixture(scope="session")
def small_dataset():
    """120-record dataset (30 per class) with a split, cheap to train on."""
    band = LevelBand(835.0, 845.0, 1.0)
    source = PhotonSource(lambda_s0=810.0, lambda_i0=810.0, entanglement_time=63.0)
    data = generate_dataset(band, source, per_class=30, seed=11)
    return with_split(data, np.random.default_rng(5))


@pytest.fixture(scope="session")
def small_dataset_path(small_dataset, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "small.csv"
    save_dataset(small_dataset, str(path))
    return str(path)
