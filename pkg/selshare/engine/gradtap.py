"""
Gradient tap at the branch entry layer.

backward_all emits one GradientRecord per task and batch: the gradient of
that task's loss with respect to the first trunk layer of its branch, the
layer right after the hard-shared representation. The buffer keeps every
s-th batch of the running epoch until the epoch is drained.
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import numpy as np

from selshare.core.exceptions import ConfigurationError, InternalError, UsageError
from selshare.core.logger import logger
from selshare.engine.net import check_finite


@dataclass(frozen=True)
class GradientRecord:
    task_id: int
    epoch: int
    batch_index: int
    gradient: np.ndarray


class EpochGradientBuffer:
    def __init__(self, task_ids: Iterable[int], batches_per_epoch: int, capture_stride: int = 1,
                 strict_drain: bool = True):
        if capture_stride < 1:
            raise ConfigurationError(f"capture stride must be >= 1, got {capture_stride}")
        self.task_ids = sorted(task_ids)
        self.batches_per_epoch = batches_per_epoch
        self.capture_stride = capture_stride
        self.strict_drain = strict_drain
        self.epoch = 0
        self.epoch_complete = False
        self.records: Dict[int, List[GradientRecord]] = {t: [] for t in self.task_ids}

    @property
    def max_records(self) -> int:
        return len(self.task_ids) * math.ceil(self.batches_per_epoch / self.capture_stride)

    @property
    def size(self) -> int:
        return sum(len(r) for r in self.records.values())

    def keeps(self, batch_index: int) -> bool:
        return batch_index % self.capture_stride == 0

    def capture(self, records: Iterable[GradientRecord]) -> "EpochGradientBuffer":
        for record in records:
            if record.epoch != self.epoch:
                raise UsageError(
                    f"record of epoch {record.epoch} offered to the buffer of epoch {self.epoch}"
                )
            if not self.keeps(record.batch_index):
                continue
            if record.task_id not in self.records:
                raise ConfigurationError(f"unknown task {record.task_id} in gradient record")
            history = self.records[record.task_id]
            if history and history[-1].batch_index >= record.batch_index:
                raise UsageError(
                    f"task {record.task_id}: batch {record.batch_index} captured out of order"
                )
            if self.size >= self.max_records:
                raise InternalError(f"gradient buffer overflow ({self.max_records} records)")
            gradient = check_finite(np.array(record.gradient, dtype=np.float64, copy=True),
                                    f"gradient of task {record.task_id}")
            history.append(GradientRecord(record.task_id, record.epoch, record.batch_index, gradient))
        return self

    def start_epoch(self, epoch: int) -> None:
        """Align the buffer with the training epoch, e.g. after epochs without capture"""
        if self.size:
            raise UsageError(f"epoch {self.epoch} still holds {self.size} undrained records")
        self.epoch = epoch
        self.epoch_complete = False

    def mark_epoch_complete(self) -> None:
        self.epoch_complete = True

    def drain_epoch(self) -> Dict[int, List[GradientRecord]]:
        """Hand over the epoch's records and start the next epoch empty"""
        if self.strict_drain and not self.epoch_complete:
            raise UsageError(f"drain requested before epoch {self.epoch} was complete")
        drained = {t: list(self.records[t]) for t in self.task_ids}
        counts = {len(r) for r in drained.values()}
        if len(counts) > 1:
            raise InternalError(f"unequal record counts across tasks: {sorted(counts)}")
        self.records = {t: [] for t in self.task_ids}
        self.epoch += 1
        self.epoch_complete = False
        return drained


def dump_epoch(drained: Dict[int, List[GradientRecord]], path, epoch: Optional[int] = None) -> Path:
    """
    Write raw gradients to one .npz per epoch.

    Arrays are named task_<id> with shape [records, rows, cols]; the
    batch_index array of each task is stored as batches_<id>.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for task_id, records in drained.items():
        if records:
            arrays[f"task_{task_id}"] = np.stack([r.gradient for r in records])
            arrays[f"batches_{task_id}"] = np.array([r.batch_index for r in records], dtype=np.int64)
    np.savez(path, **arrays)
    logger.debug(f"💾 Gradient dump for epoch {epoch} written to {path}")
    return path
