import numpy as np
import pytest

from fedrec import data
from fedrec.fism import ClientDataset, FismModel, LossConfig


def make_datasets(split: data.SplitDataset):
    all_items = np.arange(split.num_items, dtype=np.int64)
    out = {}
    for u in range(split.num_users):
        train = split.train[u]
        out[u] = ClientDataset(u, train, np.setdiff1d(all_items, train),
                               int(train.size))
    return out


def random_params(rng, num_items, dim, scale=1.0):
    from fedrec.params import ModelParams

    return ModelParams(num_items, dim,
                       scale * rng.standard_normal((num_items, dim)),
                       scale * rng.standard_normal((num_items, dim)))


@pytest.fixture(scope="session")
def desk_fixture():
    """The 90-client/200-item study fixture used by the end-to-end tests."""
    log = data.synthesize(90, 200, latent_dim=2, density=0.25, seed=44,
                          popularity=24.0)
    split = data.split(log, 0.8, seed=44)
    datasets = make_datasets(split)
    loss_cfg = LossConfig(gamma=1.0, lam=1e-4, negatives_per_positive=32)
    model = FismModel(200, 16, datasets, loss_cfg)
    return log, split, datasets, loss_cfg, model


@pytest.fixture(scope="session")
def dense_fixture():
    """Small dense fixture where every item is somebody's positive, so the
    aggregated second moment gains a positive floor after a few rounds."""
    log = data.synthesize(60, 80, latent_dim=2, density=0.5, seed=5,
                          popularity=0.0)
    split = data.split(log, 0.8, seed=5)
    datasets = make_datasets(split)
    loss_cfg = LossConfig(gamma=1.0, lam=1e-4, negatives_per_positive=8)
    model = FismModel(80, 8, datasets, loss_cfg)
    return log, split, datasets, loss_cfg, model
