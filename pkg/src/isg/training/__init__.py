from isg.training.checkpoint import load_checkpoint, save_checkpoint
from isg.training.plan import StageSpec, TrainPlan, load_plan, validate_plan
from isg.training.trainer import StageResult, run_stage

__all__ = [
    "StageResult",
    "StageSpec",
    "TrainPlan",
    "load_checkpoint",
    "load_plan",
    "run_stage",
    "save_checkpoint",
    "validate_plan",
]
