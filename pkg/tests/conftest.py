import pytest

from sketch3d import config as cfgmod
from sketch3d import dataset as ds

TINY = """
sampling.dense_count = 256
sampling.sparse_count = 32
train.recon_points = 16
train.epochs = 2
train.k = 4
train.dim = 16
train.h1 = 8
train.h2 = 16
train.recon_hidden = 16
train.lr = 0.02
"""


@pytest.fixture(scope="session")
def tiny_cfg():
    return cfgmod.parse_config(TINY)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_cfg):
    """4 classes x 5 shapes built at three levels; treat as read-only."""
    root = tmp_path_factory.mktemp("tiny")
    ds.write_shape_set(root / "shapes", 4, 5, seed=3)
    ds.build_dataset(root / "shapes", root / "data", tiny_cfg, levels=[0.0, 0.5, 1.0], seed=3)
    return root
