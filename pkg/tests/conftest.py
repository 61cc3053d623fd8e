import numpy as np
import pytest

from tabadv import bench, builtin
from tabadv import models as mod
from tabadv.data import fit_statistics


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("data")


@pytest.fixture(scope="session")
def breastcancer_entry(data_dir):
    return builtin.materialize_breastcancer(data_dir)


@pytest.fixture(scope="session")
def breastcancer(breastcancer_entry):
    return bench.prepare_dataset(breastcancer_entry, seed=42)


@pytest.fixture(scope="session")
def breastcancer_stats(breastcancer):
    return fit_statistics(breastcancer)


@pytest.fixture(scope="session")
def bc_lr(breastcancer):
    return mod.train(breastcancer, mod.ModelSpec(kind="lr"), mod.TrainConfig(seed=42))


@pytest.fixture(scope="session")
def bc_mlp(breastcancer):
    return mod.train(breastcancer, mod.ModelSpec(kind="mlp"), mod.TrainConfig(seed=42))


@pytest.fixture(scope="session")
def synthmix(tmp_path_factory):
    entry = builtin.write_synthetic_mixed(
        tmp_path_factory.mktemp("synth"), n=300, seed=11, missing_rate=0.04
    )
    return entry, bench.prepare_dataset(entry, seed=5)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
