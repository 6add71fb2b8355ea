from selshare.schemas.task import TaskSpec
from selshare.schemas.planted import PlantedSpec
from selshare.schemas.config import (
    ArchitectureConfig,
    CaptureConfig,
    ClusteringConfig,
    DatasetConfig,
    FactorizationConfig,
    OptimizerConfig,
    SharingConfig,
    TrainConfig,
    load_config,
)
from selshare.schemas.events import ArchEvent, MergeGroup, MergePlan
from selshare.schemas.trace import (
    TRACE_SCHEMA_VERSION,
    ClusterReport,
    ClusterSummary,
    EpochTrace,
    RunSummary,
    TaskMetric,
)
from selshare.schemas.checkpoint import CHECKPOINT_VERSION, BranchState, Checkpoint, LayerState
