"""
Tensor-Train factorization of gradient records.

A [rows, cols] gradient is reshaped into a d-mode tensor and decomposed by
sequential truncated SVD into cores of shape [r_{i-1}, f_i, r_i]. With fixed
ranks every record of a run yields the same number of core entries, and the
flattened, L2-normalized cores become the clustering points.
"""
import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from selshare.core.exceptions import (
    ConfigurationError,
    InternalError,
    NumericError,
    StructuralError,
)
from selshare.engine.gradtap import GradientRecord


def _prime_factors(n: int) -> List[int]:
    factors, p = [], 2
    while p * p <= n:
        while n % p == 0:
            factors.append(p)
            n //= p
        p += 1
    if n > 1:
        factors.append(n)
    return factors


def balanced_modes(n: int, parts: int) -> List[int]:
    """Split n into at most `parts` near-equal integer factors (size-1 modes dropped)"""
    if n < 1 or parts < 1:
        raise ConfigurationError(f"cannot split {n} into {parts} modes")
    bins = [1] * parts
    for p in sorted(_prime_factors(n), reverse=True):
        bins[bins.index(min(bins))] *= p
    modes = sorted((b for b in bins if b > 1), reverse=True)
    return modes or [1]


@dataclass(frozen=True)
class ReshapeSpec:
    modes: Tuple[int, ...]
    # one rank bound per inner bond; None when tolerance-driven
    max_ranks: Optional[Tuple[int, ...]] = None
    tolerance: Optional[float] = None

    def __post_init__(self):
        if not self.modes or any(m < 1 for m in self.modes):
            raise ConfigurationError(f"mode sizes must be positive, got {self.modes}")
        if (self.max_ranks is None) == (self.tolerance is None):
            raise ConfigurationError("give either max_ranks or a tolerance")
        if self.max_ranks is not None:
            if len(self.max_ranks) != len(self.modes) - 1:
                raise ConfigurationError(
                    f"{len(self.modes)} modes need {len(self.modes) - 1} ranks, got {len(self.max_ranks)}"
                )
            if any(r < 1 for r in self.max_ranks):
                raise ConfigurationError("TT ranks must be >= 1")
        if self.tolerance is not None and not 0 < self.tolerance < 1:
            raise ConfigurationError(f"tolerance must be in (0, 1), got {self.tolerance}")

    @property
    def size(self) -> int:
        return math.prod(self.modes)

    @property
    def fixed_rank(self) -> bool:
        return self.max_ranks is not None

    @classmethod
    def for_matrix(cls, rows: int, cols: int, n_modes: int, rank: Optional[int] = None,
                   tolerance: Optional[float] = None) -> "ReshapeSpec":
        """Row modes first, then column modes, so a C-order reshape lines up"""
        if n_modes == 1:
            modes = [rows * cols]
        else:
            row_parts = (n_modes + 1) // 2
            modes = balanced_modes(rows, row_parts) + balanced_modes(cols, n_modes - row_parts)
            modes = [m for m in modes if m > 1] or [1]
        ranks = None if rank is None else tuple([rank] * (len(modes) - 1))
        return cls(tuple(modes), ranks, tolerance)


@dataclass
class TTCores:
    cores: List[np.ndarray]

    @property
    def modes(self) -> List[int]:
        return [c.shape[1] for c in self.cores]

    @property
    def ranks(self) -> List[int]:
        return [1] + [c.shape[2] for c in self.cores]

    @property
    def n_params(self) -> int:
        return sum(c.size for c in self.cores)


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> None:
    """Make the largest-magnitude entry of every left singular vector positive"""
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u *= signs
    vt *= signs[:, None]


def _tolerance_rank(s: np.ndarray, delta: float) -> int:
    # smallest r with sum of discarded s_i^2 <= delta^2
    tail = np.cumsum((s ** 2)[::-1])[::-1]
    tail = np.append(tail, 0.0)
    for r in range(1, len(s) + 1):
        if tail[r] <= delta ** 2:
            return r
    return len(s)


def expected_ranks(spec: ReshapeSpec) -> List[int]:
    """Bond ranks [r_0..r_d] a fixed-rank decomposition produces for this spec"""
    if not spec.fixed_rank:
        raise ConfigurationError("ranks are data dependent in tolerance mode")
    ranks = [1]
    for k in range(len(spec.modes) - 1):
        rows = ranks[-1] * spec.modes[k]
        cols = math.prod(spec.modes[k + 1:])
        ranks.append(min(spec.max_ranks[k], rows, cols))
    ranks.append(1)
    return ranks


def factor_length(spec: ReshapeSpec, first_core_only: bool = False) -> int:
    ranks = expected_ranks(spec)
    lengths = [ranks[i] * spec.modes[i] * ranks[i + 1] for i in range(len(spec.modes))]
    return lengths[0] if first_core_only else sum(lengths)


def tt_svd(tensor, spec: ReshapeSpec) -> TTCores:
    g = np.asarray(tensor, dtype=np.float64)
    if g.size != spec.size:
        raise ConfigurationError(f"modes {list(spec.modes)} do not factor {g.size} elements")
    modes = spec.modes
    d = len(modes)

    norm = np.linalg.norm(g)
    if norm == 0.0:
        ranks = expected_ranks(spec) if spec.fixed_rank else [1] * (d + 1)
        return TTCores([np.zeros((ranks[i], modes[i], ranks[i + 1])) for i in range(d)])

    delta = None if spec.fixed_rank else spec.tolerance / math.sqrt(max(d - 1, 1)) * norm
    cores = []
    rest = g.reshape(-1)
    r_prev = 1
    for k in range(d - 1):
        rest = rest.reshape(r_prev * modes[k], -1)
        try:
            u, s, vt = np.linalg.svd(rest, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"SVD did not converge at core {k}: {exc}")
        _fix_signs(u, vt)
        r = min(spec.max_ranks[k], len(s)) if spec.fixed_rank else _tolerance_rank(s, delta)
        cores.append(u[:, :r].reshape(r_prev, modes[k], r))
        rest = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(rest.reshape(r_prev, modes[-1], 1))
    return TTCores(cores)


def tt_reconstruct(tt: TTCores) -> np.ndarray:
    cores = tt.cores
    if not cores:
        raise StructuralError("empty TT")
    for i, core in enumerate(cores):
        if core.ndim != 3:
            raise StructuralError(f"core {i} has {core.ndim} modes, expected 3")
    if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
        raise StructuralError("boundary ranks must be 1")
    for i in range(len(cores) - 1):
        if cores[i].shape[2] != cores[i + 1].shape[0]:
            raise StructuralError(
                f"rank mismatch between cores {i} and {i + 1}: {cores[i].shape[2]} vs {cores[i + 1].shape[0]}"
            )
    full = cores[0].reshape(-1, cores[0].shape[2])
    for core in cores[1:]:
        full = full @ core.reshape(core.shape[0], -1)
        full = full.reshape(-1, core.shape[2])
    return full.reshape(tt.modes)


# ============================================
# FACTOR VECTORS
# ============================================

@dataclass
class FactorVector:
    task_id: int
    epoch: int
    batch_index: int
    values: np.ndarray
    degenerate: bool = False


def factorize_record(record: GradientRecord, spec: ReshapeSpec, first_core_only: bool = False) -> FactorVector:
    """
    Cores of the unit-norm gradient, concatenated and L2-normalized.

    A zero gradient gives the zero vector flagged degenerate.
    """
    if not spec.fixed_rank:
        raise ConfigurationError("factor vectors need fixed ranks")
    length = factor_length(spec, first_core_only)
    g = np.asarray(record.gradient, dtype=np.float64)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        return FactorVector(record.task_id, record.epoch, record.batch_index, np.zeros(length), True)

    tt = tt_svd(g / norm, spec)
    cores = tt.cores[:1] if first_core_only else tt.cores
    values = np.concatenate([c.ravel() for c in cores])
    if values.size != length:
        raise InternalError(f"factor length {values.size}, expected {length}")
    values /= np.linalg.norm(values)
    return FactorVector(record.task_id, record.epoch, record.batch_index, values, False)


@dataclass
class FactorMatrix:
    task_id: int
    rows: List[FactorVector] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return np.stack([r.values for r in self.rows]) if self.rows else np.zeros((0, 0))

    @property
    def degenerate(self) -> np.ndarray:
        return np.array([r.degenerate for r in self.rows], dtype=bool)

    def __len__(self) -> int:
        return len(self.rows)


def spec_for_records(drained: Dict[int, List[GradientRecord]], n_modes: int, rank: int) -> ReshapeSpec:
    shapes = {r.gradient.shape for records in drained.values() for r in records}
    if len(shapes) != 1:
        raise InternalError(f"gradient records of one epoch have shapes {sorted(shapes)}")
    rows, cols = shapes.pop()
    return ReshapeSpec.for_matrix(rows, cols, n_modes, rank=rank)


def stack_epoch(drained: Dict[int, List[GradientRecord]], spec: ReshapeSpec, first_core_only: bool = False,
                workers: int = 1) -> Dict[int, FactorMatrix]:
    """One FactorMatrix per task, rows in batch order"""
    counts = {t: len(records) for t, records in drained.items()}
    if len(set(counts.values())) > 1:
        raise InternalError(f"unequal record counts across tasks: {counts}")

    def factorize_task(task_id: int) -> FactorMatrix:
        records = sorted(drained[task_id], key=lambda r: r.batch_index)
        return FactorMatrix(task_id, [factorize_record(r, spec, first_core_only) for r in records])

    task_ids = sorted(drained)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            matrices = list(pool.map(factorize_task, task_ids))
    else:
        matrices = [factorize_task(t) for t in task_ids]
    return {m.task_id: m for m in matrices}


def export_factor_csv(matrices: Dict[int, FactorMatrix], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [row for t in sorted(matrices) for row in matrices[t].rows]
    width = len(rows[0].values) if rows else 0
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["task_id", "epoch", "batch_index"] + [f"v_{i}" for i in range(width)])
        for row in rows:
            writer.writerow([row.task_id, row.epoch, row.batch_index] + [repr(float(v)) for v in row.values])
    return path
