"""
Planted-group task sets.

Tasks are split into groups in contiguous blocks; every group owns one
random teacher trunk and every task reads it through its own head (the
group's base head plus a small jitter). Tasks of one group are related by
construction, tasks of different groups are not.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np

from selshare.core.exceptions import ConfigurationError
from selshare.engine import net
from selshare.engine.net import DenseLayer
from selshare.models.enums import Activation, Split
from selshare.data.tasks import MultiTaskData, make_splits
from selshare.schemas.planted import PlantedSpec
from selshare.schemas.task import TaskSpec


@dataclass
class PlantedTaskSet:
    spec: PlantedSpec
    group_of: List[int]
    inputs: np.ndarray
    targets: Dict[int, np.ndarray]
    trunks: List[List[DenseLayer]]
    heads: Dict[int, DenseLayer]
    splits: Dict[Split, np.ndarray]

    @property
    def partition(self) -> List[List[int]]:
        return [[t for t, g in enumerate(self.group_of) if g == group] for group in range(self.spec.n_groups)]

    def shares_trunk(self, a: int, b: int) -> bool:
        return self.group_of[a] == self.group_of[b]

    @property
    def tasks(self) -> List[TaskSpec]:
        make = TaskSpec.ranking if self.spec.kind == "ranking" else TaskSpec.regression
        return [make(t, f"planted_{t}_g{self.group_of[t]}") for t in range(self.spec.n_tasks)]

    def to_multitask(self) -> MultiTaskData:
        return MultiTaskData(
            tasks=self.tasks,
            inputs={s: self.inputs[idx] for s, idx in self.splits.items()},
            targets={s: {t: y[idx] for t, y in self.targets.items()} for s, idx in self.splits.items()},
            seed=self.spec.seed,
            info={"dataset": "planted", "partition": self.partition},
        )


def gen_planted(spec: PlantedSpec) -> PlantedTaskSet:
    """Same spec, same seed: bit-identical inputs and targets"""
    if spec.n_groups > spec.n_tasks:
        raise ConfigurationError("more planted groups than tasks")
    rng = np.random.default_rng(spec.seed)
    group_of = [t * spec.n_groups // spec.n_tasks for t in range(spec.n_tasks)]
    inputs = rng.standard_normal((spec.n_samples, spec.input_dim))

    dims = [spec.input_dim] + list(spec.teacher_dims)
    trunks = [
        [DenseLayer.initialize(dims[i], dims[i + 1], Activation.RELU, rng) for i in range(len(dims) - 1)]
        for _ in range(spec.n_groups)
    ]
    base_heads = [DenseLayer.initialize(dims[-1], 1, Activation.LINEAR, rng) for _ in range(spec.n_groups)]
    heads = {}
    for t, group in enumerate(group_of):
        base = base_heads[group]
        jitter_w = spec.head_jitter * rng.standard_normal(base.weights.shape)
        jitter_b = spec.head_jitter * rng.standard_normal(base.bias.shape)
        heads[t] = DenseLayer(base.weights + jitter_w, base.bias + jitter_b, Activation.LINEAR)

    features = [net.forward(trunk, inputs)[0] for trunk in trunks]
    targets = {}
    for t, group in enumerate(group_of):
        raw, _ = net.forward([heads[t]], features[group])
        std = raw.std()
        standardized = (raw - raw.mean()) / std if std > 0 else raw - raw.mean()
        targets[t] = standardized + spec.noise * rng.standard_normal(raw.shape)

    splits = make_splits(spec.n_samples, spec.val_fraction, spec.test_fraction, spec.seed)
    return PlantedTaskSet(spec, group_of, inputs, targets, trunks, heads, splits)


def save_planted_spec(spec: PlantedSpec, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(spec.model_dump_json(indent=2))
    return path


def load_planted_spec(path) -> PlantedSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"planted spec not found: {path}")
    return PlantedSpec.model_validate_json(path.read_text())
