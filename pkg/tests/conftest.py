import numpy as np
import pytest

from birdcall.config import resolve_config
from birdcall.dataset import DatasetManifest, split_dataset
from birdcall.fixtures import synth_dataset

# small-scale settings used wherever a test needs to actually train something
DESK_OVERRIDES = {
    "backbone": "tiny",
    "dropout": 0.1,
    "initial_lr": 1e-3,
    "plateau_patience": 3,
    "abort_patience": 6,
    "restarts": 1,
    "max_epochs_per_cycle": 12,
    "negatives_per_epoch_base": 10,
    "negatives_per_epoch_target": 10,
}


@pytest.fixture(scope="session")
def desk_config():
    return resolve_config(overrides=dict(DESK_OVERRIDES))


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("toyset")
    return synth_dataset(2, 8, seed=11, out_dir=out)


@pytest.fixture(scope="session")
def trained_toy(toy_dataset, desk_config, tmp_path_factory):
    """One small trained network shared by inference/eval/cli tests."""
    from birdcall.model import build_model
    from birdcall.trainer import train

    out = tmp_path_factory.mktemp("toytrain")
    man = toy_dataset
    pos = DatasetManifest(man.positives, man.class_names)
    split = split_dataset(pos, desk_config.base_split, 3)
    net = build_model(man.num_classes, seed=3, backbone="tiny",
                      dropout=desk_config.dropout)
    net, report = train(net, split.subset(pos, "train"),
                        split.subset(pos, "validation"),
                        man.negatives, man.class_names, desk_config, seed=3,
                        out_dir=out, negatives_per_epoch=10, stage="base")
    return net, report, man


def random_gray(rng, rows=None, cols=None):
    rows = rows or int(rng.integers(64, 400))
    cols = cols or int(rng.integers(64, 400))
    return rng.integers(0, 256, size=(rows, cols)).astype(np.uint8)
