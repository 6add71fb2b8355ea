from typing import Dict, List

import numpy as np

from selshare.engine import net
from selshare.engine.mtmodel import BranchTopology, predict
from selshare.models.enums import Split, TaskKind
from selshare.schemas.task import TaskSpec
from selshare.schemas.trace import TaskMetric

METRIC_NAME = {
    TaskKind.BINARY_CLASSIFICATION: "accuracy",
    TaskKind.MULTICLASS_CLASSIFICATION: "accuracy",
    TaskKind.REGRESSION: "mae",
    TaskKind.RANKING: "kendall_tau",
}


def accuracy(prediction: np.ndarray, target: np.ndarray) -> float:
    if prediction.shape[1] == 1:
        return float(np.mean((prediction[:, 0] >= 0.5) == (target[:, 0] >= 0.5)))
    return float(np.mean(np.argmax(prediction, axis=1) == np.argmax(target, axis=1)))


def mean_absolute_error(prediction: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(prediction - target)))


def kendall_tau(scores, truth) -> float:
    """
    (concordant - discordant) / pairs, counted over all pairs whose true
    values differ; tied scores count as neither.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(truth, dtype=np.float64).ravel()
    upper = np.triu(np.ones((len(y), len(y)), dtype=bool), 1)
    truth_sign = np.sign(y[:, None] - y[None, :])[upper]
    score_sign = np.sign(s[:, None] - s[None, :])[upper]
    scored = truth_sign != 0
    if not scored.any():
        return 0.0
    return float(np.sum(truth_sign[scored] * score_sign[scored]) / scored.sum())


def task_metric(task: TaskSpec, prediction: np.ndarray, target: np.ndarray) -> float:
    if task.kind in (TaskKind.BINARY_CLASSIFICATION, TaskKind.MULTICLASS_CLASSIFICATION):
        return accuracy(prediction, target)
    if task.kind == TaskKind.REGRESSION:
        return mean_absolute_error(prediction, target)
    return kendall_tau(prediction, target)


def task_score(task: TaskSpec, metric: float) -> float:
    """Higher is better for every task kind"""
    return -metric if task.kind == TaskKind.REGRESSION else metric


def evaluate(model: BranchTopology, inputs: np.ndarray, targets: Dict[int, np.ndarray]) -> List[TaskMetric]:
    predictions = predict(model, inputs)
    metrics = []
    for task in model.tasks:
        p, y = predictions[task.task_id], targets[task.task_id]
        metrics.append(TaskMetric(
            task_id=task.task_id,
            loss=net.loss_eval(task.loss, p, y),
            metric_name=METRIC_NAME[task.kind],
            metric=task_metric(task, p, y),
        ))
    return metrics


def evaluate_split(model: BranchTopology, data, split: Split) -> List[TaskMetric]:
    split = Split(split)
    return evaluate(model, data.inputs[split], data.targets[split])


def mean_score(model: BranchTopology, metrics: List[TaskMetric]) -> float:
    if not metrics:
        return 0.0
    return float(np.mean([task_score(model.task(m.task_id), m.metric) for m in metrics]))
