"""
Datasets and task construction.

A LabeledDataset holds inputs, integer labels and disjoint, covering
train/val/test index lists. MultiTaskData is what the trainer consumes:
one input matrix per split and one [n, width] target matrix per task.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from selshare.core.exceptions import IngestionError, InputError
from selshare.core.logger import logger
from selshare.data.idx import load_idx
from selshare.models.enums import Split
from selshare.schemas.task import TaskSpec

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    splits: Dict[Split, np.ndarray]

    def __post_init__(self):
        n = len(self.inputs)
        if len(self.labels) != n:
            raise InputError(f"{len(self.labels)} labels for {n} inputs")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InputError(f"labels must lie in [0, {self.n_classes})")
        joined = np.concatenate([self.splits[s] for s in Split])
        if len(joined) != n or len(np.unique(joined)) != n:
            raise InputError("splits must be disjoint and cover the dataset")

    @property
    def input_dim(self) -> int:
        return int(self.inputs.shape[1])

    def split(self, split: Split) -> Tuple[np.ndarray, np.ndarray]:
        index = self.splits[Split(split)]
        return self.inputs[index], self.labels[index]


def make_splits(n: int, val_fraction: float, test_fraction: float, seed: int) -> Dict[Split, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_val, n_test = int(round(n * val_fraction)), int(round(n * test_fraction))
    return {
        Split.TRAIN: np.sort(order[n_val + n_test:]),
        Split.VAL: np.sort(order[:n_val]),
        Split.TEST: np.sort(order[n_val:n_val + n_test]),
    }


def _find(directory: Path, stem: str) -> Path:
    for candidate in (directory / stem, directory / f"{stem}.gz"):
        if candidate.is_file():
            return candidate
    raise IngestionError(directory / stem, "file not found")


def load_mnist(directory, train_size: Optional[int] = None, val_size: Optional[int] = None,
               test_size: Optional[int] = None, seed: int = 0) -> LabeledDataset:
    """
    train and val are drawn from the training files, test from the t10k
    files. Sizes of None take everything available (val then defaults to
    one sixth of the training file).
    """
    directory = Path(directory)
    train_x, train_y = load_idx(*(_find(directory, stem) for stem in MNIST_FILES["train"]))
    test_x, test_y = load_idx(*(_find(directory, stem) for stem in MNIST_FILES["test"]))

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train_x))
    if val_size is None:
        val_size = len(train_x) // 6
    if train_size is None:
        train_size = len(train_x) - val_size
    if train_size + val_size > len(train_x):
        raise IngestionError(directory, f"asked for {train_size}+{val_size} examples, have {len(train_x)}")
    train_idx = np.sort(order[:train_size])
    val_idx = np.sort(order[train_size:train_size + val_size])
    test_idx = np.sort(rng.permutation(len(test_x))[:test_size or len(test_x)])

    inputs = np.concatenate([train_x[train_idx], train_x[val_idx], test_x[test_idx]])
    labels = np.concatenate([train_y[train_idx], train_y[val_idx], test_y[test_idx]])
    bounds = np.cumsum([0, len(train_idx), len(val_idx), len(test_idx)])
    splits = {s: np.arange(bounds[i], bounds[i + 1]) for i, s in enumerate(Split)}
    logger.info(f"📦 MNIST loaded: {len(train_idx)} train / {len(val_idx)} val / {len(test_idx)} test")
    return LabeledDataset(inputs, labels, int(max(train_y.max(), test_y.max())) + 1, splits)


@dataclass
class MultiTaskData:
    tasks: List[TaskSpec]
    inputs: Dict[Split, np.ndarray]
    targets: Dict[Split, Dict[int, np.ndarray]]
    seed: int = 0
    info: Dict[str, object] = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return int(self.inputs[Split.TRAIN].shape[1])

    def size(self, split: Split) -> int:
        return int(len(self.inputs[Split(split)]))

    def batches_per_epoch(self, batch_size: int) -> int:
        return len(self._bounds(self.size(Split.TRAIN), batch_size))

    @staticmethod
    def _bounds(n: int, batch_size: int) -> List[Tuple[int, int]]:
        bounds = [(s, s + batch_size) for s in range(0, n - batch_size + 1, batch_size)]
        tail = n % batch_size
        # a trailing batch needs two examples to hold a ranking pair
        if tail >= 2 or not bounds:
            bounds.append((n - tail, n))
        return bounds

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch]).permutation(self.size(Split.TRAIN))

    def batches(self, epoch: int, batch_size: int) -> Iterator[Tuple[int, np.ndarray, Dict[int, np.ndarray]]]:
        """(batch_index, inputs, targets) over a seeded shuffle of the train split"""
        order = self.epoch_order(epoch)
        x, y = self.inputs[Split.TRAIN], self.targets[Split.TRAIN]
        for index, (start, stop) in enumerate(self._bounds(len(order), batch_size)):
            rows = order[start:stop]
            yield index, x[rows], {t: y[t][rows] for t in y}


@dataclass
class HomogeneousTaskView:
    """One binary task per class: target 1 iff label == c"""
    base: LabeledDataset

    @property
    def tasks(self) -> List[TaskSpec]:
        return [TaskSpec.binary(c, f"class_{c}") for c in range(self.base.n_classes)]

    def targets(self, split: Split) -> Dict[int, np.ndarray]:
        _, labels = self.base.split(split)
        return {c: (labels == c).astype(np.float64)[:, None] for c in range(self.base.n_classes)}

    def positives(self, split: Split) -> Dict[int, int]:
        return {c: int(t.sum()) for c, t in self.targets(split).items()}

    def to_multitask(self, seed: int = 0) -> MultiTaskData:
        return MultiTaskData(
            tasks=self.tasks,
            inputs={s: self.base.split(s)[0] for s in Split},
            targets={s: self.targets(s) for s in Split},
            seed=seed,
            info={"dataset": "one_vs_all", "n_classes": self.base.n_classes},
        )


def make_one_vs_all(dataset: LabeledDataset) -> HomogeneousTaskView:
    if dataset.n_classes < 2:
        raise InputError(f"one-vs-all needs at least 2 classes, got {dataset.n_classes}")
    return HomogeneousTaskView(dataset)
