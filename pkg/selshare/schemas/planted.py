from typing import List, Literal
from pydantic import BaseModel, ConfigDict, Field, model_validator


class PlantedSpec(BaseModel):
    """Seeded description of a planted-group task set; regenerates bit-identically"""
    model_config = ConfigDict(extra="forbid")

    n_tasks: int = Field(default=6, ge=1)
    n_groups: int = Field(default=2, ge=1)
    input_dim: int = Field(default=16, ge=1)
    n_samples: int = Field(default=1024, ge=1)
    noise: float = Field(default=0.1, ge=0.0)
    seed: int = 0
    teacher_dims: List[int] = Field(default_factory=lambda: [32, 16], min_length=1)
    head_jitter: float = Field(default=0.1, ge=0.0)
    kind: Literal["regression", "ranking"] = "regression"
    val_fraction: float = Field(default=0.15, gt=0.0, lt=1.0)
    test_fraction: float = Field(default=0.15, gt=0.0, lt=1.0)

    @property
    def split_sizes(self) -> tuple:
        """(train, val, test) sizes, rounded the way the split is drawn"""
        n_val = int(round(self.n_samples * self.val_fraction))
        n_test = int(round(self.n_samples * self.test_fraction))
        return self.n_samples - n_val - n_test, n_val, n_test

    @model_validator(mode="after")
    def check_groups(self) -> "PlantedSpec":
        if self.n_groups > self.n_tasks:
            raise ValueError("n_groups must not exceed n_tasks")
        n_train, n_val, n_test = self.split_sizes
        if n_val < 1 or n_test < 1:
            raise ValueError(f"{self.n_samples} samples leave an empty validation or test split")
        if n_train < 2:
            raise ValueError("val_fraction + test_fraction must leave at least two training samples")
        return self
