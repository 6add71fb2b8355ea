from pydantic import BaseModel, Field, model_validator

from selshare.models.enums import Activation, LossKind, TaskKind


# Loss each task kind trains with
TASK_LOSS = {
    TaskKind.BINARY_CLASSIFICATION: LossKind.BINARY_CROSS_ENTROPY,
    TaskKind.MULTICLASS_CLASSIFICATION: LossKind.CATEGORICAL_CROSS_ENTROPY,
    TaskKind.REGRESSION: LossKind.MSE,
    TaskKind.RANKING: LossKind.PAIRWISE_RANKING,
}


class TaskSpec(BaseModel):
    task_id: int = Field(..., ge=0)
    name: str = Field(..., min_length=1, max_length=100)
    kind: TaskKind
    output_width: int = Field(default=1, ge=1)
    loss: LossKind

    @model_validator(mode="after")
    def check_kind(self) -> "TaskSpec":
        if self.kind in (TaskKind.BINARY_CLASSIFICATION, TaskKind.RANKING) and self.output_width != 1:
            raise ValueError(f"{self.kind.value} task '{self.name}' needs output_width 1")
        if self.kind == TaskKind.MULTICLASS_CLASSIFICATION and self.output_width < 2:
            raise ValueError(f"multiclass task '{self.name}' needs output_width >= 2")
        if self.loss != TASK_LOSS[self.kind]:
            raise ValueError(
                f"task '{self.name}' of kind {self.kind.value} must use loss {TASK_LOSS[self.kind].value}"
            )
        return self

    @property
    def head_activation(self) -> Activation:
        if self.kind == TaskKind.BINARY_CLASSIFICATION:
            return Activation.SIGMOID
        if self.kind == TaskKind.MULTICLASS_CLASSIFICATION:
            return Activation.SOFTMAX
        return Activation.LINEAR

    @classmethod
    def binary(cls, task_id: int, name: str) -> "TaskSpec":
        return cls(task_id=task_id, name=name, kind=TaskKind.BINARY_CLASSIFICATION,
                   output_width=1, loss=LossKind.BINARY_CROSS_ENTROPY)

    @classmethod
    def regression(cls, task_id: int, name: str, output_width: int = 1) -> "TaskSpec":
        return cls(task_id=task_id, name=name, kind=TaskKind.REGRESSION,
                   output_width=output_width, loss=LossKind.MSE)

    @classmethod
    def ranking(cls, task_id: int, name: str) -> "TaskSpec":
        return cls(task_id=task_id, name=name, kind=TaskKind.RANKING,
                   output_width=1, loss=LossKind.PAIRWISE_RANKING)

    @classmethod
    def multiclass(cls, task_id: int, name: str, n_classes: int) -> "TaskSpec":
        return cls(task_id=task_id, name=name, kind=TaskKind.MULTICLASS_CLASSIFICATION,
                   output_width=n_classes, loss=LossKind.CATEGORICAL_CROSS_ENTROPY)
