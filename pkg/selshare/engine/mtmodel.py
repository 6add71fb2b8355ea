"""
Branching multi-task model.

    input -> extractor -> hard-shared layer -> branch trunks -> task heads

Every task starts on its own branch. All trunks are clones of one seeded
initialization, and heads with the same output signature are clones too, so
before the first update every branch computes the same function. Tasks that
share a branch share its trunk and differ only in their heads.
"""
import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from selshare.core.exceptions import ConfigurationError, InputError, TraceVersionError, UsageError
from selshare.engine import net
from selshare.engine.gradtap import GradientRecord
from selshare.engine.net import DenseLayer, LayerCache
from selshare.models.enums import Activation, ExtractorKind
from selshare.schemas.checkpoint import (
    CHECKPOINT_VERSION,
    BranchState,
    Checkpoint,
    LayerState,
)
from selshare.schemas.config import ArchitectureConfig
from selshare.schemas.task import TaskSpec


@dataclass
class Branch:
    branch_id: int
    trunk: List[DenseLayer]
    heads: Dict[int, DenseLayer]

    @property
    def task_ids(self) -> List[int]:
        return sorted(self.heads)

    @property
    def trunk_params(self) -> int:
        return sum(layer.n_params for layer in self.trunk)

    @property
    def n_params(self) -> int:
        return self.trunk_params + sum(head.n_params for head in self.heads.values())


@dataclass
class BranchTopology:
    tasks: List[TaskSpec]
    input_dim: int
    extractor_kind: ExtractorKind
    extractor: List[DenseLayer]
    extractor_frozen: bool
    shared_layer: DenseLayer
    branches: Dict[int, Branch]
    task_to_branch: Dict[int, int]

    def task(self, task_id: int) -> TaskSpec:
        return self.tasks[task_id]

    def branch_of(self, task_id: int) -> Branch:
        return self.branches[self.task_to_branch[task_id]]

    @property
    def task_ids(self) -> List[int]:
        return [t.task_id for t in self.tasks]

    @property
    def branch_count(self) -> int:
        return len(self.branches)

    @property
    def extractor_trainable(self) -> bool:
        return bool(self.extractor) and not self.extractor_frozen

    def named_parameters(self, trainable_only: bool = True) -> Dict[str, np.ndarray]:
        params: Dict[str, np.ndarray] = {}
        if self.extractor and (self.extractor_trainable or not trainable_only):
            for i, layer in enumerate(self.extractor):
                params[f"extractor.{i}.weights"] = layer.weights
                params[f"extractor.{i}.bias"] = layer.bias
        params["shared.weights"] = self.shared_layer.weights
        params["shared.bias"] = self.shared_layer.bias
        for branch_id in sorted(self.branches):
            branch = self.branches[branch_id]
            for i, layer in enumerate(branch.trunk):
                params[f"branch.{branch_id}.trunk.{i}.weights"] = layer.weights
                params[f"branch.{branch_id}.trunk.{i}.bias"] = layer.bias
            for task_id in branch.task_ids:
                params[f"head.{task_id}.weights"] = branch.heads[task_id].weights
                params[f"head.{task_id}.bias"] = branch.heads[task_id].bias
        return params

    def check_invariants(self) -> None:
        owners = {}
        for branch_id, branch in self.branches.items():
            if not branch.heads:
                raise ConfigurationError(f"branch {branch_id} owns no task")
            for task_id in branch.heads:
                if task_id in owners:
                    raise ConfigurationError(f"task {task_id} sits on branches {owners[task_id]} and {branch_id}")
                owners[task_id] = branch_id
        if owners != self.task_to_branch or sorted(owners) != self.task_ids:
            raise ConfigurationError("task_to_branch disagrees with the branch heads")

    def clone(self) -> "BranchTopology":
        return copy.deepcopy(self)


def _stack(dims: Sequence[int], activation: Activation, rng: np.random.Generator) -> List[DenseLayer]:
    return [DenseLayer.initialize(dims[i], dims[i + 1], activation, rng) for i in range(len(dims) - 1)]


def build_model(tasks: Sequence[TaskSpec], arch: ArchitectureConfig, input_dim: int, seed: int) -> BranchTopology:
    """One branch per task; every trunk clones the same seeded initialization"""
    if len(tasks) < 2:
        raise ConfigurationError("multi-task model needs at least two tasks")
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"duplicate task ids: {sorted(ids)}")
    if sorted(ids) != list(range(len(ids))):
        raise ConfigurationError(f"task ids must be contiguous from 0, got {sorted(ids)}")
    tasks = sorted(tasks, key=lambda t: t.task_id)

    rng = np.random.default_rng(seed)
    if arch.extractor == ExtractorKind.DENSE:
        extractor = _stack([input_dim] + list(arch.extractor_dims), Activation.RELU, rng)
    else:
        extractor = []
    feature_dim = extractor[-1].out_dim if extractor else input_dim
    shared_layer = DenseLayer.initialize(feature_dim, arch.shared_dim, Activation.RELU, rng)
    trunk_template = _stack([arch.shared_dim] + list(arch.trunk_dims), Activation.RELU, rng)

    # One head template per output signature, created in a canonical order
    signatures = sorted({(t.head_activation.value, t.output_width) for t in tasks})
    head_templates = {
        sig: DenseLayer.initialize(arch.trunk_dims[-1], sig[1], Activation(sig[0]), rng)
        for sig in signatures
    }

    branches = {}
    for task in tasks:
        head = head_templates[(task.head_activation.value, task.output_width)].clone()
        branches[task.task_id] = Branch(
            branch_id=task.task_id,
            trunk=[layer.clone() for layer in trunk_template],
            heads={task.task_id: head},
        )
    model = BranchTopology(
        tasks=list(tasks),
        input_dim=input_dim,
        extractor_kind=arch.extractor,
        extractor=extractor,
        extractor_frozen=arch.extractor_frozen,
        shared_layer=shared_layer,
        branches=branches,
        task_to_branch={t.task_id: t.task_id for t in tasks},
    )
    model.check_invariants()
    return model


# ============================================
# FORWARD / BACKWARD
# ============================================

@dataclass
class ForwardPass:
    inputs: np.ndarray
    extractor_caches: List[LayerCache]
    features: np.ndarray
    shared_cache: List[LayerCache]
    shared_out: np.ndarray
    trunk_caches: Dict[int, List[LayerCache]]
    trunk_out: Dict[int, np.ndarray]
    head_caches: Dict[int, List[LayerCache]]
    predictions: Dict[int, np.ndarray]


def forward_all(model: BranchTopology, batch) -> ForwardPass:
    """Extractor and shared layer run once; every branch reads the same representation"""
    x = net.as_tensor(batch)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ConfigurationError(f"batch must be [n, {model.input_dim}], got {x.shape}")
    if model.extractor:
        features, extractor_caches = net.forward(model.extractor, x)
    else:
        features, extractor_caches = x, []
    shared_out, shared_cache = net.forward([model.shared_layer], features)

    trunk_caches, trunk_out = {}, {}
    head_caches, predictions = {}, {}
    for branch_id in sorted(model.branches):
        branch = model.branches[branch_id]
        out, caches = net.forward(branch.trunk, shared_out)
        trunk_caches[branch_id], trunk_out[branch_id] = caches, out
        for task_id in branch.task_ids:
            pred, hcache = net.forward([branch.heads[task_id]], out)
            head_caches[task_id], predictions[task_id] = hcache, pred
    return ForwardPass(x, extractor_caches, features, shared_cache, shared_out,
                       trunk_caches, trunk_out, head_caches, predictions)


@dataclass
class BackwardPass:
    losses: Dict[int, float]
    grads: Dict[str, np.ndarray]
    # G: gradient of the summed loss w.r.t. the hard-shared layer weights
    shared_grad: np.ndarray
    # per-task terms of G, only filled when requested
    shared_terms: Dict[int, np.ndarray] = field(default_factory=dict)
    records: List[GradientRecord] = field(default_factory=list)


def backward_all(model: BranchTopology, fp: ForwardPass, targets: Dict[int, np.ndarray], *,
                 epoch: int = 0, batch_index: int = 0, include_bias: bool = False,
                 shared_terms: bool = False) -> BackwardPass:
    """
    Backpropagate the unweighted sum of all task losses.

    Each task is pushed through its trunk on its own; branch gradients are
    the sums of those per-task passes in task order. The tap reads the
    per-task gradient of the first trunk layer, so capturing never changes
    the arithmetic of training.
    """
    if fp is None:
        raise UsageError("backward_all needs a forward pass")
    missing = [t for t in model.task_ids if t not in targets]
    if missing:
        raise InputError(f"missing targets for tasks {missing}")

    losses: Dict[int, float] = {}
    grads: Dict[str, np.ndarray] = {}
    records: List[GradientRecord] = []
    terms: Dict[int, np.ndarray] = {}
    upstream_total = np.zeros_like(fp.shared_out)

    for task_id in model.task_ids:
        task = model.task(task_id)
        branch_id = model.task_to_branch[task_id]
        branch = model.branches[branch_id]
        head = branch.heads[task_id]
        target = net.as_tensor(targets[task_id])
        prediction = fp.predictions[task_id]
        if target.shape != prediction.shape:
            raise InputError(f"task {task_id}: target {target.shape} vs prediction {prediction.shape}")
        losses[task_id] = net.loss_eval(task.loss, prediction, target)

        head_cache = fp.head_caches[task_id]
        delta = net.output_delta(task.loss, head_cache[0], head.activation, target)
        head_grads = net.backprop([head], head_cache, delta)
        grads[f"head.{task_id}.weights"] = head_grads.weights[0]
        grads[f"head.{task_id}.bias"] = head_grads.biases[0]

        trunk_grads = net.backward_from_output(branch.trunk, fp.trunk_caches[branch_id], head_grads.input_grad)
        for i in range(len(branch.trunk)):
            for part, value in (("weights", trunk_grads.weights[i]), ("bias", trunk_grads.biases[i])):
                key = f"branch.{branch_id}.trunk.{i}.{part}"
                grads[key] = grads[key] + value if key in grads else value.copy()

        tapped = trunk_grads.weights[0]
        if include_bias:
            tapped = np.vstack([tapped, trunk_grads.biases[0][None, :]])
        records.append(GradientRecord(task_id, epoch, batch_index, tapped))

        upstream_total += trunk_grads.input_grad
        if shared_terms:
            term = net.backward_from_output([model.shared_layer], fp.shared_cache, trunk_grads.input_grad)
            terms[task_id] = term.weights[0]

    shared = net.backward_from_output([model.shared_layer], fp.shared_cache, upstream_total)
    grads["shared.weights"] = shared.weights[0]
    grads["shared.bias"] = shared.biases[0]

    if model.extractor_trainable:
        extractor = net.backward_from_output(model.extractor, fp.extractor_caches, shared.input_grad)
        for i in range(len(model.extractor)):
            grads[f"extractor.{i}.weights"] = extractor.weights[i]
            grads[f"extractor.{i}.bias"] = extractor.biases[i]

    return BackwardPass(losses, grads, shared.weights[0], terms, records)


def predict(model: BranchTopology, inputs: np.ndarray, batch_size: int = 512) -> Dict[int, np.ndarray]:
    if len(inputs) == 0:
        raise InputError("cannot predict on an empty split")
    chunks: Dict[int, List[np.ndarray]] = {t: [] for t in model.task_ids}
    for start in range(0, len(inputs), batch_size):
        fp = forward_all(model, inputs[start:start + batch_size])
        for task_id, pred in fp.predictions.items():
            chunks[task_id].append(pred)
    return {t: np.concatenate(parts) for t, parts in chunks.items()}


# ============================================
# PARAMETER ACCOUNTING
# ============================================

def param_count(model: BranchTopology) -> int:
    """Trainable scalars: shared layer + trunks + heads (+ extractor unless frozen)"""
    return int(sum(p.size for p in model.named_parameters(trainable_only=True).values()))


def branch_param_count(branch: Branch) -> int:
    return branch.n_params


class EpochLossLedger:
    """Running per-task loss sums of the current epoch"""

    def __init__(self):
        self.task_loss: Dict[int, float] = {}

    def add(self, losses: Dict[int, float]) -> None:
        for task_id, loss in losses.items():
            self.task_loss[task_id] = self.task_loss.get(task_id, 0.0) + loss

    def branch_loss(self, model: BranchTopology, branch_id: int) -> float:
        return sum(self.task_loss.get(t, 0.0) for t in model.branches[branch_id].task_ids)

    def reset(self) -> None:
        self.task_loss = {}


# ============================================
# CHECKPOINTS
# ============================================

def _layer_state(layer: DenseLayer) -> LayerState:
    return LayerState(
        shape=list(layer.weights.shape),
        activation=layer.activation,
        weights=layer.weights.ravel().tolist(),
        bias=layer.bias.tolist(),
    )


def _layer(state: LayerState) -> DenseLayer:
    weights = np.array(state.weights, dtype=np.float64).reshape(state.shape)
    return DenseLayer(weights, np.array(state.bias, dtype=np.float64), state.activation)


def to_checkpoint(model: BranchTopology, epoch: int) -> Checkpoint:
    return Checkpoint(
        epoch=epoch,
        input_dim=model.input_dim,
        tasks=model.tasks,
        extractor_kind=model.extractor_kind,
        extractor_frozen=model.extractor_frozen,
        extractor=[_layer_state(layer) for layer in model.extractor],
        shared=_layer_state(model.shared_layer),
        branches=[
            BranchState(
                branch_id=b.branch_id,
                trunk=[_layer_state(layer) for layer in b.trunk],
                heads={t: _layer_state(h) for t, h in sorted(b.heads.items())},
            )
            for _, b in sorted(model.branches.items())
        ],
        task_to_branch=dict(sorted(model.task_to_branch.items())),
    )


def from_checkpoint(checkpoint: Checkpoint) -> BranchTopology:
    model = BranchTopology(
        tasks=sorted(checkpoint.tasks, key=lambda t: t.task_id),
        input_dim=checkpoint.input_dim,
        extractor_kind=checkpoint.extractor_kind,
        extractor=[_layer(s) for s in checkpoint.extractor],
        extractor_frozen=checkpoint.extractor_frozen,
        shared_layer=_layer(checkpoint.shared),
        branches={
            b.branch_id: Branch(b.branch_id, [_layer(s) for s in b.trunk],
                                {t: _layer(s) for t, s in b.heads.items()})
            for b in checkpoint.branches
        },
        task_to_branch=dict(checkpoint.task_to_branch),
    )
    model.check_invariants()
    return model


def save_checkpoint(model: BranchTopology, path, epoch: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_checkpoint(model, epoch).model_dump_json())
    return path


def load_checkpoint(path) -> Tuple[BranchTopology, int]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"checkpoint not found: {path}")
    raw = path.read_text()
    try:
        checkpoint = Checkpoint.model_validate_json(raw)
    except ValidationError as exc:
        raise ConfigurationError(f"{path}: not a checkpoint ({exc.error_count()} validation errors)")
    if checkpoint.version != CHECKPOINT_VERSION:
        raise TraceVersionError(f"{path}: checkpoint version {checkpoint.version} is not supported")
    return from_checkpoint(checkpoint), checkpoint.epoch
