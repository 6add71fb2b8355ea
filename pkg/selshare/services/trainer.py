import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from selshare.core.config import settings
from selshare.core.exceptions import NumericError
from selshare.core.logger import log_cluster_outcome, log_epoch_summary, log_run_start, logger
from selshare.data.loader import load_dataset
from selshare.data.tasks import MultiTaskData
from selshare.engine.gradtap import EpochGradientBuffer, dump_epoch
from selshare.engine.groupmgr import GroupManager
from selshare.engine.mtmodel import (
    BranchTopology,
    EpochLossLedger,
    backward_all,
    build_model,
    forward_all,
    param_count,
    save_checkpoint,
)
from selshare.engine.net import OptimizerState
from selshare.engine.relcluster import ClusterOutcome, PointSet, cluster_points
from selshare.engine.ttfact import export_factor_csv, spec_for_records, stack_epoch
from selshare.models.enums import Split
from selshare.schemas.config import TrainConfig
from selshare.schemas.trace import ClusterReport, ClusterSummary, EpochTrace, RunSummary
from selshare.services.evaluation import evaluate_split, mean_score
from selshare.services.traces import RunWriter


@dataclass
class ExperimentResult:
    model: BranchTopology
    best_model: BranchTopology
    traces: List[EpochTrace]
    summary: RunSummary
    out_dir: Path
    epoch_seconds: List[float] = field(default_factory=list)


def resolve_out_dir(config: TrainConfig) -> Path:
    if config.output_dir:
        return Path(config.output_dir)
    return Path(settings.OUTPUT_DIR) / config.name


def _cluster_report(epoch: int, points: PointSet, outcome: ClusterOutcome, manager: GroupManager,
                    k: int) -> ClusterReport:
    assignment = manager.last_assignment
    return ClusterReport(
        epoch=epoch,
        n_points=points.n_points,
        n_degenerate=points.n_degenerate,
        n_noise=outcome.n_noise,
        k=k,
        min_cluster_size=outcome.min_cluster_size,
        clusters=[
            ClusterSummary(
                cluster_id=c.cluster_id,
                size=c.size,
                stability=c.stability,
                mean_core_distance=c.mean_core_distance,
                composition=c.composition,
                distinct_tasks=c.distinct_tasks,
                assigned_tasks=sorted(t for t, cid in assignment.items() if cid == c.cluster_id),
            )
            for c in outcome.clusters
        ],
        assignment=assignment,
        groups=[sorted(g.tasks) for g in manager.last_groups],
    )


def _train_epoch(model: BranchTopology, data: MultiTaskData, config: TrainConfig, optimizer: OptimizerState,
                 ledger: EpochLossLedger, buffer: Optional[EpochGradientBuffer], epoch: int) -> None:
    for batch_index, inputs, targets in data.batches(epoch, config.batch_size):
        fp = forward_all(model, inputs)
        bp = backward_all(model, fp, targets, epoch=epoch, batch_index=batch_index,
                          include_bias=config.factorization.include_bias)
        total = sum(bp.losses.values())
        if not np.isfinite(total):
            raise NumericError(f"non-finite loss at epoch {epoch}, batch {batch_index}")
        ledger.add(bp.losses)
        optimizer.step(model.named_parameters(), bp.grads)
        if buffer is not None:
            buffer.capture(bp.records)


def run_experiment(config: TrainConfig, data: Optional[MultiTaskData] = None) -> ExperimentResult:
    """
    Epoch loop:
    - every batch: forward, backward, optimizer step, gradient capture
    - epoch end, after warmup and until the lock: drain -> factorize ->
      cluster -> select groups -> merge -> lock check
    - evaluation, traces and checkpoints every epoch

    The test split is scored with the best validation model. A non-finite
    loss aborts the run; checkpoints/last.json then holds the last good epoch.
    """
    out_dir = resolve_out_dir(config)
    writer = RunWriter(out_dir)
    writer.write_config(config)
    if data is None:
        data = load_dataset(config.dataset, config.seed)
    log_run_start(str(out_dir), config.sharing.criterion.value, len(data.tasks), config.seed)

    model = build_model(data.tasks, config.architecture, data.input_dim, config.seed)
    optimizer = OptimizerState.from_config(config.optimizer)
    ledger = EpochLossLedger()
    sharing = config.sharing
    manager = GroupManager(
        sharing.criterion, sharing.merge_rule, config.clustering.dominance, sharing.lock_patience,
        seed=config.seed if sharing.random_seed is None else sharing.random_seed,
    )
    buffer = None
    if config.capture.enabled:
        buffer = EpochGradientBuffer(model.task_ids, data.batches_per_epoch(config.batch_size),
                                     config.capture.stride)
    initial_params = param_count(model)
    traces: List[EpochTrace] = []
    epoch_seconds: List[float] = []
    best_score, best_epoch, best_model = -np.inf, 0, model.clone()

    for epoch in range(config.epochs):
        started = time.perf_counter()
        ledger.reset()
        capturing = buffer is not None and not manager.locked
        restructuring = config.sharing_active and not manager.locked and epoch >= sharing.warmup_epochs
        if capturing:
            buffer.start_epoch(epoch)
        try:
            _train_epoch(model, data, config, optimizer, ledger, buffer if capturing else None, epoch)
        except NumericError as exc:
            logger.error(f"❌ Epoch {epoch} diverged: {exc.detail}; last good checkpoint kept")
            raise

        event = None
        if capturing:
            buffer.mark_epoch_complete()
            drained = buffer.drain_epoch()
            if config.capture.dump_gradients:
                dump_epoch(drained, writer.path("gradients", f"epoch_{epoch:03d}.npz"), epoch)
            if restructuring:
                fact = config.factorization
                spec = spec_for_records(drained, fact.n_modes, fact.rank)
                matrices = stack_epoch(drained, spec, fact.first_core_only, fact.workers)
                if fact.export_factors:
                    export_factor_csv(matrices, writer.path("factors", f"epoch_{epoch:03d}.csv"))
                points = PointSet.from_factor_matrices(matrices)
                outcome = cluster_points(points, config.clustering.min_cluster_size, config.clustering.k)
                log_cluster_outcome(epoch, points.n_points, outcome.n_clusters, outcome.n_noise)
                event = manager.step(model, outcome, ledger, optimizer, epoch)
                k = config.clustering.k or outcome.min_cluster_size
                writer.write_cluster_report(_cluster_report(epoch, points, outcome, manager, k))
                writer.append_event(event)
        seconds = time.perf_counter() - started
        epoch_seconds.append(seconds)

        train_metrics = evaluate_split(model, data, Split.TRAIN)
        val_metrics = evaluate_split(model, data, Split.VAL)
        val_score = mean_score(model, val_metrics)
        trace = EpochTrace(
            epoch=epoch,
            train=train_metrics,
            val=val_metrics,
            val_score=val_score,
            event=event,
            param_count=param_count(model),
            branch_count=model.branch_count,
            task_to_branch=dict(sorted(model.task_to_branch.items())),
            locked=manager.locked,
            duration_s=seconds,
        )
        traces.append(trace)
        writer.append_trace(trace)
        writer.append_metrics(epoch, Split.TRAIN.value, train_metrics)
        writer.append_metrics(epoch, Split.VAL.value, val_metrics)
        writer.append_timing(epoch, seconds, manager.locked)
        save_checkpoint(model, writer.path("checkpoints", "last.json"), epoch)
        if val_score > best_score:
            best_score, best_epoch, best_model = val_score, epoch, model.clone()
            save_checkpoint(model, writer.path("checkpoints", "best.json"), epoch)
        mean_loss = float(np.mean([m.loss for m in train_metrics]))
        log_epoch_summary(epoch, mean_loss, val_score, model.branch_count, trace.param_count)

    test_metrics = evaluate_split(best_model, data, Split.TEST)
    summary = RunSummary(
        name=config.name,
        criterion=sharing.criterion.value,
        epochs=config.epochs,
        best_epoch=best_epoch,
        best_val_score=float(best_score),
        val=traces[best_epoch].val,
        test=test_metrics,
        test_score=mean_score(best_model, test_metrics),
        lock_epoch=manager.lock_epoch,
        initial_params=initial_params,
        final_params=param_count(model),
        final_branches=model.branch_count,
        groups=[b.task_ids for _, b in sorted(model.branches.items())],
    )
    writer.write_summary(summary)
    logger.info(f"✅ Run finished | best epoch {best_epoch} | test score {summary.test_score:.4f}")
    return ExperimentResult(model, best_model, traces, summary, out_dir, epoch_seconds)
