"""Training plans: ordered stages with regimes, budgets, and seeds.

Plans are plain JSON.  ``validate_plan`` returns every violation rather
than stopping at the first, so a bad plan file surfaces all its problems
in one run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

REGIMES = ("speech_only", "isg_ct", "isg_st", "isg_scratch", "flow",
           "pipeline_gesture")
# regimes that refine an existing speech core and need its weights
FINE_TUNE_REGIMES = ("isg_ct", "isg_st")
# regimes whose output checkpoint contains a trained speech core
SPEECH_PRODUCING = ("speech_only", "isg_ct", "isg_st", "isg_scratch")

_MODEL_BY_REGIME = {
    "speech_only": "speech-only",
    "isg_ct": "tacotron2-isg",
    "isg_st": "tacotron2-isg",
    "isg_scratch": "tacotron2-isg",
    "flow": "glowtts-isg",
    "pipeline_gesture": "pipeline-gesture",
}


@dataclass
class StageSpec:
    name: str
    regime: str
    corpus: str
    iterations: int
    model: str = ""
    seed: int = 0
    batch_size: int = 8
    learning_rate: float = 1e-3
    grad_clip: float = 1.0
    eval_interval: int = 50
    checkpoint_interval: int = 0          # 0: only final; keeps last 3
    checkpoint_in: str | None = None      # path or "previous"
    freeze_set: tuple[str, ...] = ()
    gan_weight: float = 0.05
    use_gan: bool = True                  # isg_st only
    gesture_input: str = "attention_states"
    gesture_weight: float = 1.0
    model_size: str = "toy"               # "toy" or "reference"
    overrides: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)   # SamplingSchedule fields

    def __post_init__(self):
        if not self.model:
            self.model = _MODEL_BY_REGIME.get(self.regime, "")
        if self.regime == "isg_st" and not self.freeze_set:
            self.freeze_set = ("speech_core.",)

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["freeze_set"] = list(self.freeze_set)
        return d

    @staticmethod
    def from_json(d: dict) -> "StageSpec":
        d = dict(d)
        d["freeze_set"] = tuple(d.get("freeze_set", ()))
        return StageSpec(**d)


@dataclass
class TrainPlan:
    stages: list[StageSpec]
    comparison_equal_totals: bool = False

    def to_json(self) -> dict:
        return {"stages": [s.to_json() for s in self.stages],
                "comparison_equal_totals": self.comparison_equal_totals}

    @staticmethod
    def from_json(d: dict) -> "TrainPlan":
        return TrainPlan(
            stages=[StageSpec.from_json(s) for s in d.get("stages", [])],
            comparison_equal_totals=d.get("comparison_equal_totals", False))


def load_plan(path: str | Path) -> TrainPlan:
    with open(path, encoding="utf-8") as f:
        return TrainPlan.from_json(json.load(f))


def save_plan(plan: TrainPlan, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(plan.to_json(), f, indent=2)
        f.write("\n")


def validate_plan(plan: TrainPlan, root: Path | None = None,
                  check_files: bool = True) -> list[str]:
    """All violations of stage ordering, corpora, and regime constraints."""
    errors: list[str] = []
    if not plan.stages:
        return ["no stages"]
    names = set()
    speech_seen = False
    for i, st in enumerate(plan.stages):
        where = f"stage {i} ({st.name or 'unnamed'})"
        if st.name in names:
            errors.append(f"{where}: duplicate stage name")
        names.add(st.name)
        if st.regime not in REGIMES:
            errors.append(f"{where}: unknown regime {st.regime!r} "
                          f"(valid: {', '.join(REGIMES)})")
            continue
        if st.iterations <= 0:
            errors.append(f"{where}: iterations must be > 0")
        if st.regime == "isg_st" and not st.freeze_set:
            errors.append(f"{where}: isg_st requires a nonempty freeze_set")
        if st.regime != "isg_st" and st.freeze_set:
            errors.append(f"{where}: freeze_set is only valid for isg_st")
        if st.regime in FINE_TUNE_REGIMES:
            if st.checkpoint_in is None:
                errors.append(
                    f"{where}: {st.regime} needs checkpoint_in (a path or "
                    f"\"previous\")")
            elif st.checkpoint_in == "previous" and not speech_seen:
                errors.append(
                    f"{where}: checkpoint_in \"previous\" but no earlier "
                    f"speech-producing stage (pretraining must come first)")
        if check_files:
            corpus = Path(st.corpus)
            if root is not None and not corpus.is_absolute():
                corpus = root / corpus
            if not corpus.exists():
                errors.append(f"{where}: corpus manifest {corpus} not found")
        if st.checkpoint_in not in (None, "previous") and check_files:
            ckpt = Path(st.checkpoint_in)
            if root is not None and not ckpt.is_absolute():
                ckpt = root / ckpt
            if not ckpt.exists():
                errors.append(f"{where}: checkpoint_in {ckpt} not found")
        if st.regime in SPEECH_PRODUCING:
            speech_seen = True
    if plan.comparison_equal_totals:
        totals: dict[str, int] = {}
        for st in plan.stages:
            key = st.name.split("/")[0] if "/" in st.name else st.name
            totals[key] = totals.get(key, 0) + st.iterations
        if len(set(totals.values())) > 1:
            errors.append(
                f"comparison_equal_totals: per-variant iteration totals "
                f"differ: {totals}")
    return errors


def speech_eval_comparison_plans(corpus: str, total_iterations: int,
                                 seed: int, finetune_lr_factor: float = 1.0,
                                 **stage_kwargs) -> dict[str, TrainPlan]:
    """The three speech-evaluation variants, with equal iteration totals.

    (a) joint training from scratch; (b) speech-only; (c) speech-only for
    half the budget, then joint fine-tuning for the rest.
    """
    half = total_iterations // 2
    common = dict(corpus=corpus, seed=seed, **stage_kwargs)
    ft_kwargs = dict(common)
    ft_kwargs["learning_rate"] = (common.get("learning_rate", 1e-3)
                                  * finetune_lr_factor)
    scratch = TrainPlan(
        stages=[StageSpec(name="scratch", regime="isg_scratch",
                          iterations=total_iterations, **common)],
        comparison_equal_totals=True)
    speech_only = TrainPlan(
        stages=[StageSpec(name="speech_only", regime="speech_only",
                          iterations=total_iterations, **common)],
        comparison_equal_totals=True)
    fine_tune = TrainPlan(
        stages=[StageSpec(name="finetune/pre", regime="speech_only",
                          iterations=half, **common),
                StageSpec(name="finetune/isg", regime="isg_ct",
                          iterations=total_iterations - half,
                          checkpoint_in="previous", **ft_kwargs)],
        comparison_equal_totals=True)
    return {"isg_scratch": scratch, "speech_only": speech_only,
            "fine_tune": fine_tune}
