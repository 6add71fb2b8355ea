"""
Experiment configuration.

JSON with an explicit schema_version; unknown keys are rejected so that a
typo cannot silently change an experiment.
"""
import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from selshare.core.config import settings
from selshare.core.exceptions import ConfigurationError
from selshare.models.enums import (
    DatasetKind,
    ExtractorKind,
    MergeRule,
    OptimizerKind,
    SharingCriterion,
)
from selshare.schemas.planted import PlantedSpec

CONFIG_SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetConfig(_Strict):
    kind: DatasetKind
    mnist_dir: Optional[str] = None
    # None means the full split
    train_size: Optional[int] = Field(default=settings.MNIST_TRAIN_SIZE, ge=1)
    val_size: Optional[int] = Field(default=settings.MNIST_VAL_SIZE, ge=1)
    test_size: Optional[int] = Field(default=settings.MNIST_TEST_SIZE, ge=1)
    planted: Optional[PlantedSpec] = None
    # alternative to an inline spec: a file written by `selshare planted-spec`
    planted_path: Optional[str] = None

    @model_validator(mode="after")
    def check_source(self) -> "DatasetConfig":
        if self.kind == DatasetKind.MNIST and not self.mnist_dir:
            raise ValueError("mnist dataset needs mnist_dir")
        if self.kind == DatasetKind.PLANTED and (self.planted is None) == (self.planted_path is None):
            raise ValueError("planted dataset needs exactly one of planted and planted_path")
        return self


class ArchitectureConfig(_Strict):
    extractor: ExtractorKind = ExtractorKind.DENSE
    extractor_dims: List[int] = Field(default_factory=lambda: [256])
    extractor_frozen: bool = False
    shared_dim: int = Field(default=128, ge=1)
    trunk_dims: List[int] = Field(default_factory=lambda: [64, 32], min_length=1)

    @model_validator(mode="after")
    def check_dims(self) -> "ArchitectureConfig":
        if any(d < 1 for d in self.extractor_dims + self.trunk_dims):
            raise ValueError("layer widths must be positive")
        if self.extractor == ExtractorKind.IDENTITY and self.extractor_dims:
            raise ValueError("identity extractor takes no extractor_dims")
        return self


class OptimizerConfig(_Strict):
    kind: OptimizerKind = OptimizerKind.SGD_MOMENTUM
    learning_rate: float = Field(default=settings.DEFAULT_LEARNING_RATE, gt=0)
    momentum: float = Field(default=settings.DEFAULT_MOMENTUM, ge=0, lt=1)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)


class FactorizationConfig(_Strict):
    n_modes: int = Field(default=settings.DEFAULT_TT_MODES, ge=1)
    rank: int = Field(default=settings.DEFAULT_TT_RANK, ge=1)
    first_core_only: bool = False
    include_bias: bool = False
    export_factors: bool = False
    workers: int = Field(default=1, ge=1)


class ClusteringConfig(_Strict):
    # None: derived from the number of points per task
    min_cluster_size: Optional[int] = Field(default=None, ge=2)
    # None: equal to min_cluster_size
    k: Optional[int] = Field(default=None, ge=1)
    dominance: float = Field(default=settings.DEFAULT_DOMINANCE, gt=0, le=1)


class SharingConfig(_Strict):
    criterion: SharingCriterion = SharingCriterion.SIMILARITY
    merge_rule: MergeRule = MergeRule.KEEP_LOWEST_LOSS
    warmup_epochs: int = Field(default=settings.DEFAULT_WARMUP_EPOCHS, ge=0)
    lock_patience: int = Field(default=settings.LOCK_PATIENCE, ge=1)
    random_seed: Optional[int] = None


class CaptureConfig(_Strict):
    enabled: bool = True
    stride: int = Field(default=1, ge=1)
    dump_gradients: bool = False


class TrainConfig(_Strict):
    schema_version: Literal[1] = CONFIG_SCHEMA_VERSION
    name: str = Field(default="experiment", min_length=1, max_length=100)
    dataset: DatasetConfig
    architecture: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    epochs: int = Field(default=settings.DEFAULT_EPOCHS, ge=1)
    batch_size: int = Field(default=settings.DEFAULT_BATCH_SIZE, ge=2)
    factorization: FactorizationConfig = Field(default_factory=FactorizationConfig)
    clustering: ClusteringConfig = Field(default_factory=ClusteringConfig)
    sharing: SharingConfig = Field(default_factory=SharingConfig)
    capture: CaptureConfig = Field(default_factory=CaptureConfig)
    seed: int = 0
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def check_run(self) -> "TrainConfig":
        active = self.sharing.criterion != SharingCriterion.NONE
        if active and not self.capture.enabled:
            raise ValueError(f"criterion {self.sharing.criterion.value} needs the gradient capture enabled")
        if active and self.sharing.warmup_epochs >= self.epochs:
            raise ValueError("warmup_epochs must be smaller than epochs when sharing is active")
        return self

    @property
    def sharing_active(self) -> bool:
        return self.sharing.criterion != SharingCriterion.NONE

    def with_overrides(self, **updates) -> "TrainConfig":
        """Apply CLI overrides and validate the result again"""
        data = self.model_dump(mode="json")
        for dotted, value in updates.items():
            if value is None:
                continue
            node = data
            *path, leaf = dotted.split(".")
            for key in path:
                node = node[key]
            node[leaf] = value
        return TrainConfig.model_validate(data)


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})")
    if raw.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise ConfigurationError(
            f"{path}: unsupported schema_version {raw.get('schema_version')!r}, expected {CONFIG_SCHEMA_VERSION}"
        )
    try:
        return TrainConfig.model_validate(raw)
    except ValidationError as exc:
        errors = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigurationError(f"{path}: " + "; ".join(errors))
