import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from selshare.core.logger import logger
from selshare.data.loader import load_dataset
from selshare.models.enums import SharingCriterion
from selshare.schemas.config import TrainConfig
from selshare.services.trainer import ExperimentResult, resolve_out_dir, run_experiment

COMPARISON_FILE = "comparison.csv"
DEFAULT_CRITERIA = [c for c in SharingCriterion]


def compare_criteria(config: TrainConfig, criteria: Optional[Sequence[SharingCriterion]] = None,
                     out_dir=None) -> Dict[SharingCriterion, ExperimentResult]:
    """
    Same config, data and seed under each criterion; one sub-directory per
    criterion plus comparison.csv at the top.
    """
    out_dir = Path(out_dir) if out_dir is not None else resolve_out_dir(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_dataset(config.dataset, config.seed)
    results: Dict[SharingCriterion, ExperimentResult] = {}
    for criterion in criteria or DEFAULT_CRITERIA:
        criterion = SharingCriterion(criterion)
        run_config = config.with_overrides(**{
            "sharing.criterion": criterion.value,
            "output_dir": str(out_dir / criterion.value),
        })
        logger.info(f"🧪 Comparing criterion: {criterion.value}")
        results[criterion] = run_experiment(run_config, data)

    rows: List[list] = []
    for criterion, result in results.items():
        s = result.summary
        rows.append([
            criterion.value, repr(s.test_score), repr(s.best_val_score), s.final_params,
            s.final_branches, "" if s.lock_epoch is None else s.lock_epoch,
            f"{float(np.mean(result.epoch_seconds)):.6f}",
        ])
    with (out_dir / COMPARISON_FILE).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["criterion", "test_score", "best_val_score", "final_params",
                         "final_branches", "lock_epoch", "mean_epoch_seconds"])
        writer.writerows(rows)
    return results
