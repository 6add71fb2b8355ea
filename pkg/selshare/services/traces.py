"""
Run directory writers and readers.

trace.jsonl and arch_events.jsonl are append-only JSON lines; every trace
line carries schema_version so that old readers refuse newer files instead
of misreading them.
"""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from selshare.core.exceptions import ConfigurationError, TraceVersionError
from selshare.schemas.config import TrainConfig
from selshare.schemas.events import ArchEvent
from selshare.schemas.trace import (
    TRACE_SCHEMA_VERSION,
    ClusterReport,
    EpochTrace,
    RunSummary,
    TaskMetric,
)

TRACE_FILE = "trace.jsonl"
EVENTS_FILE = "arch_events.jsonl"
METRICS_FILE = "metrics.csv"
TIMINGS_FILE = "timings.csv"
SUMMARY_FILE = "summary.json"
CONFIG_FILE = "config.json"


class RunWriter:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        # a run directory describes exactly one run
        for name in (TRACE_FILE, EVENTS_FILE):
            (self.out_dir / name).write_text("")
        self._csv(METRICS_FILE, ["epoch", "split", "task_id", "loss", "metric_name", "metric"], mode="w")
        self._csv(TIMINGS_FILE, ["epoch", "seconds", "locked"], mode="w")

    def path(self, *parts) -> Path:
        return self.out_dir.joinpath(*parts)

    def _csv(self, name: str, row: list, mode: str = "a") -> None:
        with self.path(name).open(mode, newline="") as handle:
            csv.writer(handle).writerow(row)

    def _append_line(self, name: str, line: str) -> None:
        with self.path(name).open("a") as handle:
            handle.write(line + "\n")

    def write_config(self, config: TrainConfig) -> None:
        self.path(CONFIG_FILE).write_text(config.model_dump_json(indent=2))

    def append_trace(self, trace: EpochTrace) -> None:
        self._append_line(TRACE_FILE, trace.model_dump_json())

    def append_event(self, event: ArchEvent) -> None:
        self._append_line(EVENTS_FILE, event.model_dump_json())

    def append_metrics(self, epoch: int, split: str, metrics: List[TaskMetric]) -> None:
        with self.path(METRICS_FILE).open("a", newline="") as handle:
            writer = csv.writer(handle)
            for m in metrics:
                writer.writerow([epoch, split, m.task_id, repr(m.loss), m.metric_name, repr(m.metric)])

    def append_timing(self, epoch: int, seconds: float, locked: bool) -> None:
        self._csv(TIMINGS_FILE, [epoch, f"{seconds:.6f}", int(locked)])

    def write_cluster_report(self, report: ClusterReport) -> Path:
        path = self.path("clusters", f"epoch_{report.epoch:03d}.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.model_dump_json(indent=2))
        return path

    def write_summary(self, summary: RunSummary) -> None:
        self.path(SUMMARY_FILE).write_text(summary.model_dump_json(indent=2))


# ============================================
# READERS
# ============================================

def read_traces(run_dir) -> List[EpochTrace]:
    path = Path(run_dir) / TRACE_FILE
    if not path.is_file():
        raise ConfigurationError(f"no {TRACE_FILE} in {run_dir}")
    traces = []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError:
            raise ConfigurationError(f"{path}:{number}: not a JSON line")
        version = raw.get("schema_version")
        if version != TRACE_SCHEMA_VERSION:
            raise TraceVersionError(f"{path}:{number}: trace schema_version {version!r} is not supported")
        try:
            traces.append(EpochTrace.model_validate(raw))
        except ValidationError as exc:
            raise ConfigurationError(f"{path}:{number}: malformed trace ({exc.error_count()} errors)")
    return traces


def read_summary(run_dir) -> Optional[RunSummary]:
    path = Path(run_dir) / SUMMARY_FILE
    if not path.is_file():
        return None
    return RunSummary.model_validate_json(path.read_text())


def read_timings(run_dir) -> List[dict]:
    path = Path(run_dir) / TIMINGS_FILE
    if not path.is_file():
        return []
    with path.open(newline="") as handle:
        return [
            {"epoch": int(r["epoch"]), "seconds": float(r["seconds"]), "locked": bool(int(r["locked"]))}
            for r in csv.DictReader(handle)
        ]


@dataclass
class TraceSummary:
    epochs: int
    lock_epoch: Optional[int]
    final_branches: int
    final_params: int
    param_curve: List[int] = field(default_factory=list)
    branch_curve: List[int] = field(default_factory=list)
    # (epoch, merged task list)
    groups: List[tuple] = field(default_factory=list)
    final_groups: List[List[int]] = field(default_factory=list)


def inspect_trace(run_dir, csv_path=None) -> TraceSummary:
    traces = read_traces(run_dir)
    if not traces:
        raise ConfigurationError(f"{run_dir}: trace is empty")
    lock_epoch = next((t.epoch for t in traces if t.locked), None)
    groups = [
        (t.epoch, g.tasks)
        for t in traces if t.event is not None
        for g in t.event.plan.groups
    ]
    final = traces[-1]
    by_branch = {}
    for task_id, branch_id in sorted(final.task_to_branch.items()):
        by_branch.setdefault(branch_id, []).append(task_id)
    summary = TraceSummary(
        epochs=len(traces),
        lock_epoch=lock_epoch,
        final_branches=final.branch_count,
        final_params=final.param_count,
        param_curve=[t.param_count for t in traces],
        branch_curve=[t.branch_count for t in traces],
        groups=groups,
        final_groups=[tasks for _, tasks in sorted(by_branch.items())],
    )
    if csv_path is not None:
        with Path(csv_path).open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "param_count", "branch_count", "val_score", "locked"])
            for t in traces:
                writer.writerow([t.epoch, t.param_count, t.branch_count, repr(t.val_score), int(t.locked)])
    return summary
