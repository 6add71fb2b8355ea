"""
Pytest configuration and fixtures
"""
import json

import numpy as np
import pytest

from selshare.engine.mtmodel import build_model
from selshare.schemas.config import ArchitectureConfig, TrainConfig
from selshare.schemas.planted import PlantedSpec
from selshare.schemas.task import TaskSpec


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="Run the slow acceptance checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test data"""
    return np.random.default_rng(1234)


@pytest.fixture
def small_arch() -> ArchitectureConfig:
    """Dense extractor, narrow layers"""
    return ArchitectureConfig(extractor="dense", extractor_dims=[8], shared_dim=6, trunk_dims=[5, 4])


@pytest.fixture
def identity_arch() -> ArchitectureConfig:
    """No extractor: inputs feed the shared layer directly"""
    return ArchitectureConfig(extractor="identity", extractor_dims=[], shared_dim=6, trunk_dims=[5, 4])


@pytest.fixture
def mixed_tasks() -> list:
    """One task of every kind"""
    return [
        TaskSpec.binary(0, "binary"),
        TaskSpec.regression(1, "regression"),
        TaskSpec.ranking(2, "ranking"),
        TaskSpec.multiclass(3, "multiclass", n_classes=3),
    ]


@pytest.fixture
def mixed_model(mixed_tasks, small_arch):
    """Four heterogeneous tasks on a 7-input model"""
    return build_model(mixed_tasks, small_arch, input_dim=7, seed=3)


@pytest.fixture
def mixed_batch(rng):
    """Inputs and matching targets for mixed_model"""
    n = 8
    x = rng.standard_normal((n, 7))
    classes = rng.integers(0, 3, size=n)
    targets = {
        0: rng.integers(0, 2, size=(n, 1)).astype(float),
        1: rng.standard_normal((n, 1)),
        2: rng.standard_normal((n, 1)),
        3: np.eye(3)[classes],
    }
    return x, targets


def planted_config_dict(tmp_path, **overrides) -> dict:
    """Tiny planted run: six regression tasks in two groups, identity extractor"""
    config = {
        "schema_version": 1,
        "name": "planted-test",
        "dataset": {
            "kind": "planted",
            "planted": PlantedSpec(n_tasks=6, n_groups=2, input_dim=8, n_samples=240, noise=0.1,
                                   teacher_dims=[12, 8], seed=5).model_dump(),
        },
        "architecture": {"extractor": "identity", "extractor_dims": [], "shared_dim": 12, "trunk_dims": [8, 4]},
        "optimizer": {"kind": "sgd_momentum", "learning_rate": 0.02, "momentum": 0.5},
        "epochs": 4,
        "batch_size": 16,
        "factorization": {"n_modes": 4, "rank": 2},
        "clustering": {"min_cluster_size": 5, "dominance": 0.5},
        "sharing": {"criterion": "similarity", "warmup_epochs": 1},
        "capture": {"enabled": True, "stride": 1},
        "seed": 0,
        "output_dir": str(tmp_path / "run"),
    }
    for dotted, value in overrides.items():
        node = config
        *path, leaf = dotted.split("__")
        for key in path:
            node = node[key]
        node[leaf] = value
    return config


@pytest.fixture
def planted_config(tmp_path) -> TrainConfig:
    """Validated tiny planted config writing under tmp_path"""
    return TrainConfig.model_validate(planted_config_dict(tmp_path))


@pytest.fixture
def planted_config_file(tmp_path):
    """The same config as a JSON file"""
    path = tmp_path / "planted.json"
    path.write_text(json.dumps(planted_config_dict(tmp_path)))
    return path
