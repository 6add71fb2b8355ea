from typing import Dict, List, Literal

from pydantic import BaseModel

from selshare.models.enums import Activation, ExtractorKind
from selshare.schemas.task import TaskSpec

CHECKPOINT_FORMAT = "selshare-checkpoint"
CHECKPOINT_VERSION = 1


class LayerState(BaseModel):
    shape: List[int]
    activation: Activation
    weights: List[float]
    bias: List[float]


class BranchState(BaseModel):
    branch_id: int
    trunk: List[LayerState]
    heads: Dict[int, LayerState]


class Checkpoint(BaseModel):
    format: Literal["selshare-checkpoint"] = CHECKPOINT_FORMAT
    version: int = CHECKPOINT_VERSION
    epoch: int
    input_dim: int
    tasks: List[TaskSpec]
    extractor_kind: ExtractorKind
    extractor_frozen: bool
    extractor: List[LayerState]
    shared: LayerState
    branches: List[BranchState]
    task_to_branch: Dict[int, int]
