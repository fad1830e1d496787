"""Training orchestration: plans, freezing, determinism, regimes."""

import json

import numpy as np
import pytest
import torch

from isg.training.checkpoint import load_checkpoint, state_bytes
from isg.training.plan import (
    StageSpec,
    TrainPlan,
    load_plan,
    save_plan,
    speech_eval_comparison_plans,
    validate_plan,
)
from isg.training.trainer import run_plan, run_stage


def stage(prepared_manifest, **kw):
    path, _ = prepared_manifest
    base = dict(name="s", regime="speech_only", corpus=str(path),
                iterations=2, seed=0, batch_size=4, eval_interval=2)
    base.update(kw)
    return StageSpec(**base)


class TestValidatePlan:
    def test_empty_plan(self):
        assert validate_plan(TrainPlan(stages=[])) == ["no stages"]

    def test_st_without_checkpoint_and_bad_corpus_all_reported(self, tmp_path):
        plan = TrainPlan(stages=[
            StageSpec(name="st", regime="isg_st", corpus=str(tmp_path / "nope"),
                      iterations=5)])
        errors = validate_plan(plan)
        assert len(errors) == 2
        assert any("checkpoint_in" in e for e in errors)
        assert any("not found" in e for e in errors)

    def test_st_previous_without_speech_stage(self, prepared_manifest):
        path, _ = prepared_manifest
        plan = TrainPlan(stages=[
            StageSpec(name="st", regime="isg_st", corpus=str(path),
                      iterations=5, checkpoint_in="previous")])
        errors = validate_plan(plan)
        assert any("pretraining must come first" in e for e in errors)

    def test_valid_three_stage_recipe(self, prepared_manifest):
        path, _ = prepared_manifest
        plan = TrainPlan(stages=[
            StageSpec(name="pretrain", regime="speech_only", corpus=str(path),
                      iterations=5),
            StageSpec(name="adapt", regime="speech_only", corpus=str(path),
                      iterations=5, checkpoint_in="previous"),
            StageSpec(name="st", regime="isg_st", corpus=str(path),
                      iterations=5, checkpoint_in="previous")])
        assert validate_plan(plan) == []

    def test_freeze_set_only_for_st(self, prepared_manifest):
        path, _ = prepared_manifest
        plan = TrainPlan(stages=[
            StageSpec(name="x", regime="speech_only", corpus=str(path),
                      iterations=5, freeze_set=("speech_core.",))])
        assert any("freeze_set" in e for e in validate_plan(plan))

    def test_st_freeze_set_defaults_nonempty(self, prepared_manifest):
        path, _ = prepared_manifest
        st = StageSpec(name="x", regime="isg_st", corpus=str(path),
                       iterations=5, checkpoint_in="previous")
        assert st.freeze_set == ("speech_core.",)

    def test_zero_iterations_rejected(self, prepared_manifest):
        path, _ = prepared_manifest
        plan = TrainPlan(stages=[StageSpec(
            name="x", regime="speech_only", corpus=str(path), iterations=0)])
        assert any("iterations" in e for e in validate_plan(plan))

    def test_unknown_regime_listed(self, prepared_manifest):
        path, _ = prepared_manifest
        plan = TrainPlan(stages=[StageSpec(
            name="x", regime="banana", corpus=str(path), iterations=1)])
        errors = validate_plan(plan)
        assert any("unknown regime" in e for e in errors)

    def test_comparison_plans_have_equal_totals(self, prepared_manifest):
        path, _ = prepared_manifest
        plans = speech_eval_comparison_plans(str(path), 100, seed=0)
        for plan in plans.values():
            assert validate_plan(plan) == []
            assert sum(s.iterations for s in plan.stages) == 100

    def test_plan_json_round_trip(self, tmp_path, prepared_manifest):
        path, _ = prepared_manifest
        plan = TrainPlan(stages=[StageSpec(
            name="x", regime="speech_only", corpus=str(path), iterations=3,
            overrides={"speech": {"encoder_dim": 32}})])
        save_plan(plan, tmp_path / "plan.json")
        back = load_plan(tmp_path / "plan.json")
        assert back.stages[0].overrides == plan.stages[0].overrides
        assert back.stages[0].regime == "speech_only"


@pytest.fixture(scope="module")
def speech_ckpt(prepared_manifest, tmp_path_factory):
    work = tmp_path_factory.mktemp("speechwork")
    result = run_stage(stage(prepared_manifest, name="pre", iterations=3),
                       work)
    return result.checkpoint_path


class TestRunStage:
    def test_metrics_file_and_checkpoint_written(self, prepared_manifest,
                                                 tmp_path):
        result = run_stage(stage(prepared_manifest), tmp_path)
        assert result.checkpoint_path.exists()
        lines = result.metrics_path.read_text().strip().splitlines()
        assert len(lines) == len(result.metrics)
        record = json.loads(lines[-1])
        assert "val_speech_mse" in record and "wall_time" in record

    def test_same_seed_identical_metric_logs(self, prepared_manifest,
                                             tmp_path):
        a = run_stage(stage(prepared_manifest, iterations=4), tmp_path / "a")
        b = run_stage(stage(prepared_manifest, iterations=4), tmp_path / "b")
        for ma, mb in zip(a.metrics, b.metrics):
            ka = {k: v for k, v in ma.items() if k != "wall_time"}
            kb = {k: v for k, v in mb.items() if k != "wall_time"}
            assert ka == kb

    def test_different_seed_differs(self, prepared_manifest, tmp_path):
        a = run_stage(stage(prepared_manifest, iterations=3, seed=0),
                      tmp_path / "a")
        b = run_stage(stage(prepared_manifest, iterations=3, seed=1),
                      tmp_path / "b")
        assert a.metrics[-1]["loss"] != b.metrics[-1]["loss"]

    def test_st_freezes_speech_bytes_exactly(self, prepared_manifest,
                                             speech_ckpt, tmp_path):
        st = stage(prepared_manifest, name="st", regime="isg_st",
                   iterations=2, checkpoint_in=str(speech_ckpt))
        result = run_stage(st, tmp_path)
        before, _ = load_checkpoint(speech_ckpt)
        after = state_bytes(result.model, prefix="speech_core.")
        for name, raw in after.items():
            assert before[name].tobytes() == raw, name

    def test_ct_changes_at_least_one_speech_parameter(self, prepared_manifest,
                                                      speech_ckpt, tmp_path):
        ct = stage(prepared_manifest, name="ct", regime="isg_ct",
                   iterations=1, checkpoint_in=str(speech_ckpt))
        result = run_stage(ct, tmp_path)
        before, _ = load_checkpoint(speech_ckpt)
        after = state_bytes(result.model, prefix="speech_core.")
        changed = [n for n, raw in after.items()
                   if n in before and before[n].tobytes() != raw]
        assert changed

    def test_st_without_checkpoint_fails(self, prepared_manifest, tmp_path):
        from isg.training.trainer import PlanError
        with pytest.raises(PlanError):
            run_stage(stage(prepared_manifest, regime="isg_st"), tmp_path)

    def test_gan_weight_zero_equals_mse_only(self, prepared_manifest,
                                             speech_ckpt, tmp_path):
        zero_gan = stage(prepared_manifest, name="a", regime="isg_st",
                         iterations=1, checkpoint_in=str(speech_ckpt),
                         gan_weight=0.0, use_gan=True)
        mse_only = stage(prepared_manifest, name="b", regime="isg_st",
                         iterations=1, checkpoint_in=str(speech_ckpt),
                         use_gan=False)
        ra = run_stage(zero_gan, tmp_path / "a")
        rb = run_stage(mse_only, tmp_path / "b")
        ga = state_bytes(ra.model, prefix="gesture.")
        gb = state_bytes(rb.model, prefix="gesture.")
        assert ga.keys() == gb.keys()
        for name in ga:
            assert ga[name] == gb[name], name

    def test_flow_stage_trains_and_checkpoints(self, prepared_manifest,
                                               tmp_path):
        st = stage(prepared_manifest, name="flow", regime="flow",
                   iterations=3, eval_interval=3)
        result = run_stage(st, tmp_path)
        assert result.checkpoint_path.exists()
        assert np.isfinite(result.metrics[-1]["val_nll"])

    def test_flow_val_nll_trend_decreases(self, prepared_manifest, tmp_path):
        # trend over evaluation checkpoints: median of deltas < 0
        st = stage(prepared_manifest, name="flowtrend", regime="flow",
                   iterations=100, eval_interval=20, learning_rate=2e-3)
        result = run_stage(st, tmp_path)
        nlls = [m["val_nll"] for m in result.metrics]
        deltas = np.diff(nlls)
        assert np.median(deltas) < 0, nlls

    def test_periodic_checkpoints_keep_last_three(self, prepared_manifest,
                                                  tmp_path):
        st = stage(prepared_manifest, name="cadence", iterations=10,
                   eval_interval=10, checkpoint_interval=2)
        result = run_stage(st, tmp_path)
        snaps = sorted(result.checkpoint_path.parent.glob("checkpoint_it*.npz"))
        assert [s.name for s in snaps] == [
            "checkpoint_it0000006.npz", "checkpoint_it0000008.npz",
            "checkpoint_it0000010.npz"]

    def test_pipeline_gesture_stage_trains(self, prepared_manifest, tmp_path):
        st = stage(prepared_manifest, name="pg", regime="pipeline_gesture",
                   iterations=3, eval_interval=3)
        result = run_stage(st, tmp_path)
        assert result.checkpoint_path.exists()
        assert np.isfinite(result.metrics[-1]["val_nll"])

    def test_mel_input_ablation_trains(self, prepared_manifest, speech_ckpt,
                                       tmp_path):
        st = stage(prepared_manifest, name="mel_ablation", regime="isg_ct",
                   iterations=2, checkpoint_in=str(speech_ckpt),
                   gesture_input="mel_frames")
        result = run_stage(st, tmp_path)
        assert np.isfinite(result.metrics[-1]["gesture_mse"])
        _, meta = load_checkpoint(result.checkpoint_path)
        assert meta["configs"]["gesture"]["input_source"] == "mel_frames"

    def test_checkpoint_meta_self_describing(self, prepared_manifest,
                                             tmp_path):
        result = run_stage(stage(prepared_manifest), tmp_path)
        _, meta = load_checkpoint(result.checkpoint_path)
        assert meta["regime"] == "speech_only"
        assert "stats" in meta and "configs" in meta
        assert meta["iteration"] == 2


class TestRunPlan:
    def test_invalid_plan_raises_with_all_errors(self, tmp_path):
        from isg.training.trainer import PlanError
        plan = TrainPlan(stages=[StageSpec(
            name="x", regime="isg_st", corpus=str(tmp_path / "missing"),
            iterations=0)])
        with pytest.raises(PlanError) as err:
            run_plan(plan, tmp_path)
        text = str(err.value)
        assert "iterations" in text and "not found" in text

    def test_chained_stages_pass_checkpoints(self, prepared_manifest,
                                             tmp_path):
        path, _ = prepared_manifest
        plan = TrainPlan(stages=[
            StageSpec(name="pre", regime="speech_only", corpus=str(path),
                      iterations=2, batch_size=4, eval_interval=2),
            StageSpec(name="ct", regime="isg_ct", corpus=str(path),
                      iterations=2, batch_size=4, eval_interval=2,
                      checkpoint_in="previous")])
        results = run_plan(plan, tmp_path)
        assert len(results) == 2
        assert results[1].checkpoint_path.exists()
