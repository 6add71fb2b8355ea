"""
Tests for task grouping, merge planning and the architecture lock
"""
import numpy as np
import pytest

from selshare.core.exceptions import PlanError
from selshare.engine.groupmgr import (
    GroupManager,
    TaskGroup,
    all_grouped,
    apply_merge,
    check_lock,
    plan_merge,
    select_groups,
)
from selshare.engine.mtmodel import EpochLossLedger, build_model, forward_all, param_count
from selshare.engine.net import OptimizerState
from selshare.engine.relcluster import ClusterInfo, ClusterOutcome, MutualReachGraph, assign_tasks
from selshare.models.enums import MergeRule, SharingCriterion
from selshare.schemas.events import ArchEvent, MergeGroup, MergePlan
from selshare.schemas.task import TaskSpec


def _model(n_tasks, arch, seed=0):
    tasks = [TaskSpec.regression(i, f"task_{i}") for i in range(n_tasks)]
    return build_model(tasks, arch, input_dim=4, seed=seed)


def _outcome(clusters, positions=None):
    """clusters: list of (task ids, mean core distance); one point per task"""
    labels, tasks, infos = [], [], []
    for cid, (task_ids, density) in enumerate(clusters):
        start = len(labels)
        labels += [cid] * len(task_ids)
        tasks += list(task_ids)
        infos.append(ClusterInfo(cid, 1.0, np.arange(start, len(labels)), density,
                                 {t: 1 for t in task_ids}))
    graph = None
    if positions is not None:
        x = np.repeat(np.asarray(positions, dtype=float), [len(t) for t, _ in clusters])
        d = np.abs(x[:, None] - x[None, :])
        graph = MutualReachGraph(1, d, np.zeros(len(x)), d)
    return ClusterOutcome(np.array(labels), infos, 2, graph, np.array(tasks))


def _groups(outcome, criterion, **kwargs):
    return select_groups(outcome, assign_tasks(outcome, 0.5), criterion, **kwargs)


def _empty_event(epoch):
    return ArchEvent(epoch=epoch, plan=MergePlan(epoch=epoch, criterion="similarity"),
                     param_count_before=10, param_count_after=10, branches_before=4, branches_after=4)


def _merge_event(epoch):
    group = MergeGroup(requested_tasks=[0, 1], tasks=[0, 1], branches=[0, 1], survivor=0,
                       branch_losses={0: 1.0, 1: 2.0}, discarded_params=3)
    return ArchEvent(epoch=epoch, plan=MergePlan(epoch=epoch, criterion="similarity", groups=[group]),
                     param_count_before=10, param_count_after=7, branches_before=4, branches_after=3)


class TestSelectGroups:
    """Sharing criteria"""

    def test_similarity_takes_multi_task_clusters(self):
        """A dense cluster of {2, 3, 5} forms a group, a lone task does not"""
        outcome = _outcome([([2, 3, 5], 0.1), ([0], 0.05)])
        groups = _groups(outcome, SharingCriterion.SIMILARITY)
        assert [g.tasks for g in groups] == [frozenset({2, 3, 5})]

    def test_similarity_densest_first(self):
        """Several groups per epoch, ordered by mean core distance"""
        outcome = _outcome([([0, 1], 0.4), ([2, 3], 0.1), ([4, 5, 6], 0.2)])
        groups = _groups(outcome, SharingCriterion.SIMILARITY)
        assert [sorted(g.tasks) for g in groups] == [[2, 3], [4, 5, 6], [0, 1]]

    def test_variance_picks_most_distinct_tasks(self):
        """Four distinct tasks beat two"""
        outcome = _outcome([([0, 1], 0.1), ([2, 3, 4, 5], 0.5)])
        groups = _groups(outcome, SharingCriterion.VARIANCE)
        assert [g.tasks for g in groups] == [frozenset({2, 3, 4, 5})]

    def test_variance_tie_goes_to_lower_id(self):
        """Equal task counts and sizes: lower cluster id"""
        outcome = _outcome([([0, 1], 0.3), ([2, 3], 0.1)])
        assert _groups(outcome, SharingCriterion.VARIANCE)[0].cluster_ids == (0,)

    def test_dissimilarity_joins_farthest_clusters(self):
        """Medoids at 0, 1 and 10: clusters 0 and 2 join"""
        outcome = _outcome([([0, 1], 0.1), ([2], 0.1), ([3], 0.1)], positions=[0.0, 1.0, 10.0])
        groups = _groups(outcome, SharingCriterion.DISSIMILARITY)
        assert len(groups) == 1
        assert groups[0].tasks == frozenset({0, 1, 3})
        assert groups[0].cluster_ids == (0, 2)
        assert groups[0].score == pytest.approx(10.0)

    @pytest.mark.parametrize("criterion", list(SharingCriterion))
    def test_no_clusters_no_groups(self, criterion):
        """Every criterion returns nothing without clusters"""
        outcome = ClusterOutcome(np.full(4, -1), [], 2, None, np.array([0, 1, 2, 3]))
        assert _groups(outcome, criterion) == []

    def test_random_is_seeded(self):
        """Same seed, same choice"""
        outcome = _outcome([([0, 1], 0.1), ([2, 3], 0.1), ([4, 5], 0.1)])
        a = _groups(outcome, SharingCriterion.RANDOM, rng=np.random.default_rng(9), seen=set())
        b = _groups(outcome, SharingCriterion.RANDOM, rng=np.random.default_rng(9), seen=set())
        assert a == b
        assert len(a) == 1

    def test_random_removes_duplicates(self):
        """A task set drawn once is never drawn again"""
        outcome = _outcome([([0, 1], 0.1)])
        seen = set()
        rng = np.random.default_rng(0)
        assert len(_groups(outcome, SharingCriterion.RANDOM, rng=rng, seen=seen)) == 1
        assert _groups(outcome, SharingCriterion.RANDOM, rng=rng, seen=seen) == []


class TestPlanMerge:
    """Merge planning"""

    def test_survivor_has_lowest_loss(self, identity_arch):
        """Branch losses 0.9, 0.4, 0.7: task 4's branch survives"""
        model = _model(8, identity_arch)
        ledger = EpochLossLedger()
        ledger.add({1: 0.9, 4: 0.4, 7: 0.7})
        plan = plan_merge(model, [TaskGroup(frozenset({1, 4, 7}), (0,), 0.1)], ledger, epoch=3)
        assert len(plan.groups) == 1
        group = plan.groups[0]
        assert group.survivor == 4
        assert group.branches == [1, 4, 7]
        assert group.discarded_params == 2 * model.branches[1].trunk_params

    def test_survivor_tie_lowest_branch(self, identity_arch):
        """Equal losses: lowest branch id"""
        model = _model(3, identity_arch)
        plan = plan_merge(model, [TaskGroup(frozenset({1, 2}), (0,), 0.1)], EpochLossLedger())
        assert plan.groups[0].survivor == 1

    def test_group_on_one_branch_dropped(self, identity_arch):
        """Tasks already sharing a branch need no merge"""
        model = _model(4, identity_arch)
        first = plan_merge(model, [TaskGroup(frozenset({0, 1}), (0,), 0.1)], EpochLossLedger())
        apply_merge(model, first)
        plan = plan_merge(model, [TaskGroup(frozenset({0, 1}), (0,), 0.1)], EpochLossLedger())
        assert plan.is_empty

    def test_group_pulls_in_branch_mates(self, identity_arch):
        """A merged branch joins with all of its tasks"""
        model = _model(4, identity_arch)
        apply_merge(model, plan_merge(model, [TaskGroup(frozenset({0, 1}), (0,), 0.1)], EpochLossLedger()))
        plan = plan_merge(model, [TaskGroup(frozenset({1, 2}), (0,), 0.1)], EpochLossLedger())
        assert plan.groups[0].requested_tasks == [1, 2]
        assert plan.groups[0].tasks == [0, 1, 2]


class TestApplyMerge:
    """Executing merge plans"""

    def _plan(self, model, tasks, rule=MergeRule.KEEP_LOWEST_LOSS, ledger=None):
        return plan_merge(model, [TaskGroup(frozenset(tasks), (0,), 0.0)], ledger or EpochLossLedger(), rule)

    def test_identical_branches_keep_predictions(self, identity_arch, rng):
        """Merging equal trunks changes no output"""
        model = _model(3, identity_arch)
        x = rng.standard_normal((5, 4))
        before = forward_all(model, x).predictions
        apply_merge(model, self._plan(model, {0, 2}))
        after = forward_all(model, x).predictions
        assert model.task_to_branch == {0: 0, 1: 1, 2: 0}
        for task_id in range(3):
            np.testing.assert_array_equal(before[task_id], after[task_id])

    def test_heads_are_preserved(self, identity_arch):
        """Absorbed heads keep their weights"""
        model = _model(3, identity_arch)
        model.branches[2].heads[2].weights += 1.5
        head = model.branches[2].heads[2].weights.copy()
        apply_merge(model, self._plan(model, {0, 2}))
        np.testing.assert_array_equal(model.branches[0].heads[2].weights, head)

    def test_param_delta_is_discarded_trunks(self, identity_arch):
        """Parameters drop by exactly the discarded trunks"""
        model = _model(5, identity_arch)
        plan = self._plan(model, {0, 2, 4})
        before = param_count(model)
        event = apply_merge(model, plan)
        assert before - param_count(model) == plan.groups[0].discarded_params
        assert event.param_count_before - event.param_count_after == plan.groups[0].discarded_params
        assert event.branches_after == event.branches_before - 2

    def test_mean_of_equal_trunks(self, identity_arch):
        """Mean of W and W is W"""
        model = _model(2, identity_arch)
        trunk = [layer.weights.copy() for layer in model.branches[0].trunk]
        apply_merge(model, self._plan(model, {0, 1}, MergeRule.MEAN))
        for layer, weights in zip(model.branches[0].trunk, trunk):
            np.testing.assert_array_equal(layer.weights, weights)

    @pytest.mark.parametrize("rule, combine", [(MergeRule.MAX, max), (MergeRule.MIN, min)])
    def test_elementwise_rules(self, identity_arch, rng, rule, combine):
        """Max and min against an entry-by-entry loop over three trunks"""
        model = _model(3, identity_arch)
        for branch in model.branches.values():
            for layer in branch.trunk:
                layer.weights[...] = rng.standard_normal(layer.weights.shape)
                layer.bias[...] = rng.standard_normal(layer.bias.shape)
        trunks = [[layer.weights.copy() for layer in model.branches[b].trunk] for b in range(3)]
        apply_merge(model, self._plan(model, {0, 1, 2}, rule))
        survivor = model.branch_of(0)
        for i, layer in enumerate(survivor.trunk):
            expected = np.empty_like(layer.weights)
            for idx in np.ndindex(expected.shape):
                expected[idx] = combine(t[i][idx] for t in trunks)
            np.testing.assert_array_equal(layer.weights, expected)

    def test_mean_rule_folds_in_branch_order(self, identity_arch):
        """Three trunks 0, 1, 2 fold to ((0 + 1) / 2 + 2) / 2"""
        model = _model(3, identity_arch)
        for b, branch in model.branches.items():
            for layer in branch.trunk:
                layer.weights[...] = float(b)
                layer.bias[...] = float(b)
        apply_merge(model, self._plan(model, {0, 1, 2}, MergeRule.MEAN))
        for layer in model.branch_of(0).trunk:
            np.testing.assert_array_equal(layer.weights, 1.25)
            np.testing.assert_array_equal(layer.bias, 1.25)

    def test_mean_rule_matches_sequential_fold(self, identity_arch, rng):
        """Random trunks against a hand-written fold"""
        model = _model(3, identity_arch)
        for branch in model.branches.values():
            branch.trunk[0].weights[...] = rng.standard_normal(branch.trunk[0].weights.shape)
        w = [model.branches[b].trunk[0].weights.copy() for b in range(3)]
        expected = ((w[0] + w[1]) / 2.0 + w[2]) / 2.0
        apply_merge(model, self._plan(model, {0, 1, 2}, MergeRule.MEAN))
        np.testing.assert_allclose(model.branch_of(0).trunk[0].weights, expected, rtol=1e-14)

    def test_seven_tasks_to_three_branches(self, identity_arch):
        """Two groups in one plan"""
        model = _model(7, identity_arch)
        groups = [TaskGroup(frozenset({0, 1, 2}), (0,), 0.1), TaskGroup(frozenset({3, 4, 5}), (1,), 0.2)]
        apply_merge(model, plan_merge(model, groups, EpochLossLedger()))
        assert model.branch_count == 3
        assert sorted(b.task_ids for b in model.branches.values()) == [[0, 1, 2], [3, 4, 5], [6]]

    def test_optimizer_state_of_absorbed_trunks_dropped(self, identity_arch):
        """Only the survivor keeps its trunk buffers"""
        model = _model(3, identity_arch)
        optimizer = OptimizerState()
        params = model.named_parameters()
        optimizer.step(params, {k: np.ones_like(v) for k, v in params.items()})
        apply_merge(model, self._plan(model, {0, 1}), optimizer)
        assert "branch.0.trunk.0.weights" in optimizer.first
        assert "branch.1.trunk.0.weights" not in optimizer.first
        assert "head.1.weights" in optimizer.first

    def test_inconsistent_plan_is_atomic(self, identity_arch):
        """A bad second group leaves the model untouched"""
        model = _model(4, identity_arch)
        plan = self._plan(model, {0, 1})
        bad = plan.groups[0].model_copy(update={"branches": [2, 3], "tasks": [2, 3], "survivor": 9})
        plan = plan.model_copy(update={"groups": plan.groups + [bad]})
        with pytest.raises(PlanError):
            apply_merge(model, plan)
        assert model.branch_count == 4
        assert model.task_to_branch == {0: 0, 1: 1, 2: 2, 3: 3}

    def test_applying_twice_is_rejected(self, identity_arch):
        """The absorbed branch no longer exists"""
        model = _model(3, identity_arch)
        plan = self._plan(model, {0, 1})
        apply_merge(model, plan)
        with pytest.raises(PlanError):
            apply_merge(model, plan)


class TestLock:
    """Stopping the restructuring"""

    def test_three_empty_epochs(self, identity_arch):
        """Empty plans at epochs 5, 6, 7"""
        model = _model(4, identity_arch)
        history = [_empty_event(5), _empty_event(6)]
        assert not check_lock(history, model)
        history.append(_empty_event(7))
        assert check_lock(history, model)

    def test_merge_resets_the_count(self, identity_arch):
        """empty, empty, merge, empty"""
        model = _model(4, identity_arch)
        history = [_empty_event(1), _empty_event(2), _merge_event(3), _empty_event(4)]
        assert not check_lock(history, model)

    def test_all_grouped(self, identity_arch):
        """Ten tasks on five branches of two"""
        model = _model(10, identity_arch)
        groups = [TaskGroup(frozenset({2 * i, 2 * i + 1}), (i,), 0.0) for i in range(5)]
        apply_merge(model, plan_merge(model, groups, EpochLossLedger()))
        assert all_grouped(model)
        assert check_lock([], model)

    def test_manager_locks_and_refuses(self, identity_arch):
        """Once locked, further steps are errors"""
        model = _model(4, identity_arch)
        manager = GroupManager(SharingCriterion.SIMILARITY, patience=2)
        empty = ClusterOutcome(np.full(4, -1), [], 2, None, np.array([0, 1, 2, 3]))
        first = manager.step(model, empty, EpochLossLedger(), None, epoch=1)
        assert not first.locked
        second = manager.step(model, empty, EpochLossLedger(), None, epoch=2)
        assert second.locked
        assert manager.lock_epoch == 2
        with pytest.raises(PlanError):
            manager.step(model, empty, EpochLossLedger(), None, epoch=3)

    def test_manager_merges_similar_tasks(self, identity_arch):
        """A cluster holding tasks 0 and 3 merges their branches"""
        model = _model(4, identity_arch)
        manager = GroupManager(SharingCriterion.SIMILARITY)
        outcome = _outcome([([0, 3], 0.1), ([1], 0.1), ([2], 0.2)])
        event = manager.step(model, outcome, EpochLossLedger(), None, epoch=1)
        assert event.changed
        assert model.task_to_branch[3] == 0
        assert manager.last_assignment == {0: 0, 1: 1, 2: 2, 3: 0}
