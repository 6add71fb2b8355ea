from typing import Dict, List

from pydantic import BaseModel, ConfigDict, Field

from selshare.models.enums import MergeRule, SharingCriterion


class MergeGroup(BaseModel):
    """One regrouping: every branch listed collapses onto `survivor`"""
    requested_tasks: List[int]
    tasks: List[int]
    branches: List[int]
    survivor: int
    branch_losses: Dict[int, float]
    discarded_params: int = Field(..., ge=0)


class MergePlan(BaseModel):
    epoch: int
    criterion: SharingCriterion
    rule: MergeRule = MergeRule.KEEP_LOWEST_LOSS
    groups: List[MergeGroup] = Field(default_factory=list)
    cluster_ids: List[int] = Field(default_factory=list)
    scores: Dict[str, float] = Field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not self.groups


class ArchEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    epoch: int
    plan: MergePlan
    param_count_before: int
    param_count_after: int
    branches_before: int
    branches_after: int
    locked: bool = False

    @property
    def changed(self) -> bool:
        return not self.plan.is_empty
