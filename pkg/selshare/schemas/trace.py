from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from selshare.schemas.events import ArchEvent

TRACE_SCHEMA_VERSION = 1


class TaskMetric(BaseModel):
    task_id: int
    loss: float
    metric_name: str
    metric: float


class EpochTrace(BaseModel):
    schema_version: int = TRACE_SCHEMA_VERSION
    epoch: int
    train: List[TaskMetric]
    val: List[TaskMetric]
    val_score: float
    event: Optional[ArchEvent] = None
    param_count: int
    branch_count: int
    task_to_branch: Dict[int, int]
    locked: bool = False
    # Wall clock goes to timings.csv so that trace files stay reproducible
    duration_s: float = Field(default=0.0, exclude=True)


class ClusterSummary(BaseModel):
    cluster_id: int
    size: int
    stability: float
    mean_core_distance: float
    composition: Dict[int, int]
    distinct_tasks: int
    assigned_tasks: List[int]


class ClusterReport(BaseModel):
    schema_version: int = TRACE_SCHEMA_VERSION
    epoch: int
    n_points: int
    n_degenerate: int
    n_noise: int
    k: int
    min_cluster_size: int
    clusters: List[ClusterSummary]
    assignment: Dict[int, Optional[int]]
    groups: List[List[int]]


class RunSummary(BaseModel):
    schema_version: int = TRACE_SCHEMA_VERSION
    name: str
    criterion: str
    epochs: int
    best_epoch: int
    best_val_score: float
    val: List[TaskMetric]
    test: List[TaskMetric]
    test_score: float
    lock_epoch: Optional[int] = None
    initial_params: int
    final_params: int
    final_branches: int
    groups: List[List[int]]
