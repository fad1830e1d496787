"""Speech-evaluation comparison across training recipes.

Three variants of the speech core are trained with identical total
iteration budgets and compared by deterministic teacher-forced mel MSE on
the validation split:

* ``isg_scratch``  - joint speech+gesture training from random init,
* ``speech_only``  - the speech core alone,
* ``fine_tune``    - speech-only for half the budget, then joint
                     co-training for the remainder.

The comparison is about mechanism direction (joint training from scratch
hurts speech; fine-tuning after speech-only training does not), so the
reported statistic is the median over seeds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from isg.config import DataConfig
from isg.training.plan import speech_eval_comparison_plans
from isg.training.trainer import run_plan

VARIANTS = ("isg_scratch", "speech_only", "fine_tune")


@dataclass
class ComparisonResult:
    total_iterations: int
    seeds: tuple[int, ...]
    val_mse: dict = field(default_factory=dict)     # variant -> [per seed]

    def median(self, variant: str) -> float:
        return float(np.median(self.val_mse[variant]))

    def to_json(self) -> dict:
        return {"total_iterations": self.total_iterations,
                "seeds": list(self.seeds),
                "val_mse": self.val_mse,
                "medians": {v: self.median(v) for v in self.val_mse}}

    def ordering_holds(self) -> bool:
        """fine_tune <= speech_only < isg_scratch on median val MSE."""
        ft, so, sc = (self.median("fine_tune"), self.median("speech_only"),
                      self.median("isg_scratch"))
        return ft <= so < sc


def run_speech_eval_comparison(corpus: str, total_iterations: int,
                               seeds, work_dir: str | Path,
                               data_cfg: DataConfig | None = None,
                               **stage_kwargs) -> ComparisonResult:
    """Train all variants for every seed; returns final val MSEs.

    The per-run statistic is the mean over the last three evaluation
    checkpoints (spanning the final ~10% of training), a lower-variance
    estimate of the end-of-training validation MSE.
    """
    work = Path(work_dir)
    seeds = tuple(seeds)
    result = ComparisonResult(total_iterations=total_iterations, seeds=seeds,
                              val_mse={v: [] for v in VARIANTS})
    stage_kwargs.setdefault("eval_interval",
                            max(10, total_iterations // 20))
    for seed in seeds:
        plans = speech_eval_comparison_plans(corpus, total_iterations, seed,
                                             **stage_kwargs)
        for variant in VARIANTS:
            plan = plans[variant]
            results = run_plan(plan, work / f"seed{seed}" / variant,
                               data_cfg=data_cfg)
            tail = [m["val_speech_mse"] for m in results[-1].metrics
                    if "val_speech_mse" in m][-3:]
            result.val_mse[variant].append(float(np.mean(tail)))
    return result


def write_comparison(result: ComparisonResult, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(result.to_json(), f, indent=2)
        f.write("\n")
