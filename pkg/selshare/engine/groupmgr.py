"""
Task grouping and branch merging.

A sharing criterion turns the epoch's clusters into task groups, a merge
plan maps every group onto existing branches, and applying the plan keeps
one trunk per group and discards the rest. Tasks never leave a branch, so a
group always pulls in every task already sharing a branch with one of its
members.
"""
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from selshare.core.exceptions import PlanError
from selshare.core.logger import log_arch_event, log_lock, logger
from selshare.engine.mtmodel import BranchTopology, EpochLossLedger, param_count
from selshare.engine.net import OptimizerState
from selshare.engine.relcluster import ClusterOutcome, assign_tasks
from selshare.models.enums import MergeRule, SharingCriterion
from selshare.schemas.events import ArchEvent, MergeGroup, MergePlan


@dataclass(frozen=True)
class TaskGroup:
    tasks: FrozenSet[int]
    cluster_ids: Tuple[int, ...]
    score: float


def _tasks_by_cluster(outcome: ClusterOutcome, assignment: Dict[int, Optional[int]]) -> Dict[int, List[int]]:
    grouped: Dict[int, List[int]] = {c.cluster_id: [] for c in outcome.clusters}
    for task_id, cluster_id in sorted(assignment.items()):
        if cluster_id is not None:
            grouped[cluster_id].append(task_id)
    return grouped


def select_groups(outcome: ClusterOutcome, assignment: Dict[int, Optional[int]], criterion: SharingCriterion,
                  rng: Optional[np.random.Generator] = None,
                  seen: Optional[set] = None) -> List[TaskGroup]:
    criterion = SharingCriterion(criterion)
    if criterion == SharingCriterion.NONE or outcome.n_clusters == 0:
        return []
    by_cluster = _tasks_by_cluster(outcome, assignment)
    multi = [c for c in outcome.clusters if len(by_cluster[c.cluster_id]) >= 2]

    if criterion == SharingCriterion.SIMILARITY:
        groups, taken = [], set()
        for info in sorted(multi, key=lambda c: (c.mean_core_distance, c.cluster_id)):
            tasks = frozenset(by_cluster[info.cluster_id]) - taken
            if len(tasks) >= 2:
                groups.append(TaskGroup(tasks, (info.cluster_id,), info.mean_core_distance))
                taken |= tasks
        return groups

    if criterion == SharingCriterion.DISSIMILARITY:
        populated = [c.cluster_id for c in outcome.clusters if by_cluster[c.cluster_id]]
        if len(populated) < 2:
            return []
        medoids = {c: outcome.medoid(c) for c in populated}
        best, best_pair = -1.0, None
        for i, a in enumerate(populated):
            for b in populated[i + 1:]:
                distance = float(outcome.graph.d_mreach[medoids[a], medoids[b]])
                if distance > best:
                    best, best_pair = distance, (a, b)
        tasks = frozenset(by_cluster[best_pair[0]] + by_cluster[best_pair[1]])
        return [TaskGroup(tasks, best_pair, best)] if len(tasks) >= 2 else []

    if criterion == SharingCriterion.VARIANCE:
        candidates = [c for c in multi if c.distinct_tasks >= 2]
        if not candidates:
            return []
        info = max(candidates, key=lambda c: (c.distinct_tasks, c.size, -c.cluster_id))
        return [TaskGroup(frozenset(by_cluster[info.cluster_id]), (info.cluster_id,), float(info.distinct_tasks))]

    # random control
    rng = rng if rng is not None else np.random.default_rng(0)
    seen = seen if seen is not None else set()
    candidates = [c for c in multi if frozenset(by_cluster[c.cluster_id]) not in seen]
    if not candidates:
        return []
    info = candidates[int(rng.integers(len(candidates)))]
    tasks = frozenset(by_cluster[info.cluster_id])
    seen.add(tasks)
    return [TaskGroup(tasks, (info.cluster_id,), 0.0)]


def plan_merge(model: BranchTopology, groups: Sequence[TaskGroup], ledger: EpochLossLedger,
               rule: MergeRule = MergeRule.KEEP_LOWEST_LOSS, epoch: int = 0,
               criterion: SharingCriterion = SharingCriterion.SIMILARITY) -> MergePlan:
    """
    Map task groups onto branches. The survivor is the branch with the
    lowest aggregated epoch loss (ties: lowest branch id); a group living on
    one branch already, or touching a branch claimed by an earlier group, is
    dropped.
    """
    merge_groups: List[MergeGroup] = []
    cluster_ids: List[int] = []
    scores: Dict[str, float] = {}
    claimed = set()
    for group in groups:
        branches = sorted({model.task_to_branch[t] for t in group.tasks})
        if len(branches) < 2:
            logger.debug(f"Group {sorted(group.tasks)} already shares branch {branches[0]}")
            continue
        if claimed.intersection(branches):
            logger.debug(f"Group {sorted(group.tasks)} overlaps an earlier group, skipped")
            continue
        claimed.update(branches)
        losses = {b: ledger.branch_loss(model, b) for b in branches}
        survivor = min(branches, key=lambda b: (losses[b], b))
        merge_groups.append(MergeGroup(
            requested_tasks=sorted(group.tasks),
            tasks=sorted(t for b in branches for t in model.branches[b].task_ids),
            branches=branches,
            survivor=survivor,
            branch_losses=losses,
            discarded_params=sum(model.branches[b].trunk_params for b in branches if b != survivor),
        ))
        cluster_ids.extend(group.cluster_ids)
        scores[",".join(str(c) for c in group.cluster_ids)] = group.score
    return MergePlan(epoch=epoch, criterion=criterion, rule=rule, groups=merge_groups,
                     cluster_ids=cluster_ids, scores=scores)


def _merged_trunk(model: BranchTopology, group: MergeGroup, rule: MergeRule) -> List[Tuple[np.ndarray, np.ndarray]]:
    trunks = [model.branches[b].trunk for b in group.branches]
    if rule == MergeRule.KEEP_LOWEST_LOSS:
        return [(layer.weights, layer.bias) for layer in model.branches[group.survivor].trunk]
    # pairwise fold in ascending branch order
    if rule == MergeRule.MEAN:
        def combine(a, b):
            return (a + b) / 2.0
    else:
        combine = np.maximum if rule == MergeRule.MAX else np.minimum
    merged = []
    for i in range(len(trunks[0])):
        weights, bias = trunks[0][i].weights.copy(), trunks[0][i].bias.copy()
        for trunk in trunks[1:]:
            weights = combine(weights, trunk[i].weights)
            bias = combine(bias, trunk[i].bias)
        merged.append((weights, bias))
    return merged


def _validate_plan(model: BranchTopology, plan: MergePlan) -> None:
    seen_branches = set()
    for group in plan.groups:
        if len(group.branches) < 2:
            raise PlanError(f"group {group.tasks} needs at least two branches")
        if group.survivor not in group.branches:
            raise PlanError(f"survivor {group.survivor} is not one of {group.branches}")
        for b in group.branches:
            if b not in model.branches:
                raise PlanError(f"branch {b} does not exist")
            if b in seen_branches:
                raise PlanError(f"branch {b} appears in two groups")
            seen_branches.add(b)
        owned = sorted(t for b in group.branches for t in model.branches[b].task_ids)
        if owned != sorted(group.tasks):
            raise PlanError(f"group tasks {group.tasks} do not match the branches' tasks {owned}")


def apply_merge(model: BranchTopology, plan: MergePlan, optimizer: Optional[OptimizerState] = None) -> ArchEvent:
    """All-or-nothing: the plan is checked in full before the model is touched"""
    _validate_plan(model, plan)
    params_before, branches_before = param_count(model), model.branch_count
    merged = [_merged_trunk(model, group, plan.rule) for group in plan.groups]

    for group, trunk in zip(plan.groups, merged):
        survivor = model.branches[group.survivor]
        for layer, (weights, bias) in zip(survivor.trunk, trunk):
            if weights is not layer.weights:
                layer.weights[...] = weights
                layer.bias[...] = bias
        for b in group.branches:
            if b == group.survivor:
                continue
            absorbed = model.branches.pop(b)
            survivor.heads.update(absorbed.heads)
            for task_id in absorbed.heads:
                model.task_to_branch[task_id] = group.survivor
            if optimizer is not None:
                optimizer.drop(f"branch.{b}.")
    model.check_invariants()

    event = ArchEvent(
        epoch=plan.epoch,
        plan=plan,
        param_count_before=params_before,
        param_count_after=param_count(model),
        branches_before=branches_before,
        branches_after=model.branch_count,
    )
    log_arch_event(plan.epoch, [g.tasks for g in plan.groups], params_before, event.param_count_after)
    return event


def all_grouped(model: BranchTopology) -> bool:
    return all(len(b.heads) >= 2 for b in model.branches.values())


def check_lock(history: Sequence[ArchEvent], model: BranchTopology, patience: int = 3) -> bool:
    if all_grouped(model):
        return True
    recent = list(history)[-patience:]
    return len(recent) == patience and all(not e.changed for e in recent)


class GroupManager:
    """Per-run state of the restructuring phase: history, lock and the random stream"""

    def __init__(self, criterion: SharingCriterion, rule: MergeRule = MergeRule.KEEP_LOWEST_LOSS,
                 dominance: float = 0.5, patience: int = 3, seed: int = 0):
        self.criterion = SharingCriterion(criterion)
        self.rule = MergeRule(rule)
        self.dominance = dominance
        self.patience = patience
        self.rng = np.random.default_rng(seed)
        self.seen: set = set()
        self.history: List[ArchEvent] = []
        self.locked = False
        self.lock_epoch: Optional[int] = None
        self.last_assignment: Dict[int, Optional[int]] = {}
        self.last_groups: List[TaskGroup] = []

    def step(self, model: BranchTopology, outcome: ClusterOutcome, ledger: EpochLossLedger,
             optimizer: Optional[OptimizerState], epoch: int) -> ArchEvent:
        if self.locked:
            raise PlanError(f"architecture is locked since epoch {self.lock_epoch}")
        self.last_assignment = assign_tasks(outcome, self.dominance, model.task_ids)
        self.last_groups = select_groups(outcome, self.last_assignment, self.criterion, self.rng, self.seen)
        plan = plan_merge(model, self.last_groups, ledger, self.rule, epoch, self.criterion)
        event = apply_merge(model, plan, optimizer)
        self.history.append(event)
        if check_lock(self.history, model, self.patience):
            reason = "all tasks grouped" if all_grouped(model) else f"{self.patience} epochs without change"
            self.locked, self.lock_epoch = True, epoch
            event = event.model_copy(update={"locked": True})
            self.history[-1] = event
            log_lock(epoch, reason)
        return event
