"""Benchmark harness: parameter counts, CI mechanics, motion stats, plots."""

import numpy as np
import pytest
import torch

from isg import bench
from isg.features.motion import MotionSequence, gaussian_smooth
from isg.features.skeleton import toy_skeleton


class TestCountParameters:
    def test_affine_layer_oracle(self):
        layer = torch.nn.Linear(4, 3)
        assert bench.count_parameters(layer) == 15

    def test_pipeline_is_exact_sum(self):
        a = torch.nn.Linear(4, 3)
        b = torch.nn.Linear(7, 2)
        assert bench.count_parameters([a, b]) == 15 + 16

    def test_reference_speech_core_near_28_19M(self):
        from isg.config import SpeechCoreConfig
        from isg.models.speech_core import SpeechCore
        from isg.tokens import Tokenizer

        cfg = SpeechCoreConfig(n_symbols=Tokenizer().n_symbols)
        n = bench.count_parameters(SpeechCore(cfg))
        assert abs(n - 28_190_000) / 28_190_000 < 0.05, n

    def test_frozen_parameters_not_counted(self):
        layer = torch.nn.Linear(4, 3)
        layer.bias.requires_grad_(False)
        assert bench.count_parameters(layer) == 12


class TestStudentT:
    def test_1_2_3_oracle(self):
        mean, half = bench.mean_ci([1.0, 2.0, 3.0])
        assert mean == pytest.approx(2.0)
        assert half == pytest.approx(4.3027 / np.sqrt(3), abs=1e-3)

    def test_constant_samples_zero_halfwidth(self):
        mean, half = bench.mean_ci([2.0] * 8)
        assert mean == 2.0 and half == 0.0

    def test_quantiles_decrease_with_df(self):
        qs = [bench.student_t_quantile(df) for df in
              (1, 2, 5, 10, 30, 60, 120, 500)]
        assert all(b <= a for a, b in zip(qs, qs[1:]))
        assert qs[-1] == 1.96

    def test_single_sample_rejected(self):
        with pytest.raises(ValueError):
            bench.mean_ci([1.0])


class DummyResult:
    def __init__(self, duration_s):
        self.duration_s = duration_s


class TestTimeSynthesis:
    def test_constant_stub_has_tiny_halfwidth(self):
        def synthesize(text):
            return DummyResult(duration_s=1.0)

        report = bench.time_synthesis(synthesize, ["a", "b"], n_repeats=4,
                                      model_name="stub")
        assert report.n_runs == 8
        assert report.mean_utterance_s == 1.0
        assert report.ci_half_width_s < max(0.5 * report.mean_s, 5e-3)

    def test_needs_two_repeats(self):
        with pytest.raises(ValueError):
            bench.time_synthesis(lambda t: DummyResult(1.0), ["a"],
                                 n_repeats=1)

    def test_markdown_table_contains_models(self):
        reports = [bench.TimingReport("m1", 4, 0.5, 0.01, 2.0),
                   bench.TimingReport("m2", 4, 0.7, 0.02, 2.2)]
        table = bench.timing_table_markdown(reports, {"m1": 1_000_000})
        assert "m1" in table and "m2" in table and "1.00M" in table


class TestMotionStats:
    def test_constant_motion_zero_stats(self):
        m = MotionSequence(np.ones((10, 3)), 20.0)
        s = bench.motion_stats(m)
        assert np.allclose(s["range"], 0.0)
        assert s["variation"] == 0.0

    def test_ramp_stats(self):
        m = MotionSequence(np.linspace(0, 1, 11)[:, None], 20.0)
        s = bench.motion_stats(m)
        assert s["range"][0] == pytest.approx(1.0)
        assert s["variation"] == pytest.approx(0.1)

    def test_single_frame_rejected(self):
        with pytest.raises(ValueError):
            bench.motion_stats(MotionSequence(np.ones((1, 3)), 20.0))

    def test_smoothing_never_increases_variation(self, rng):
        for _ in range(100):
            m = MotionSequence(rng.normal(size=(rng.integers(4, 50), 4)), 20.0)
            sm = gaussian_smooth(m, window=3, sigma=1.0)
            assert (bench.motion_stats(sm)["variation"]
                    <= bench.motion_stats(m)["variation"] + 1e-12)


class TestGesturePlot:
    def test_constant_pose_single_point(self, tmp_path):
        sk = toy_skeleton()
        pose = np.zeros(3 * sk.n_joints)
        motion = MotionSequence(np.tile(pose, (6, 1)), 20.0, sk.joint_names)
        data = bench.gesture_space_plot([motion], sk,
                                        out_png=tmp_path / "p.png",
                                        out_csv=tmp_path / "p.csv")
        traces = data["plots"][0]
        for name, tr in traces.items():
            assert np.allclose(tr["xy"], tr["xy"][0:1])
        assert (tmp_path / "p.png").exists()
        assert (tmp_path / "p.csv").exists()

    def test_colors_follow_joint_groups(self):
        sk = toy_skeleton()
        motion = MotionSequence(np.zeros((2, 3 * sk.n_joints)), 20.0,
                                sk.joint_names)
        data = bench.gesture_space_plot([motion], sk)
        traces = data["plots"][0]
        assert traces["RightArm"]["color"] == "red"
        assert traces["LeftHand"]["color"] == "green"
        assert traces["Spine"]["color"] == "blue"

    def test_mismatched_joints_rejected(self):
        sk = toy_skeleton()
        motion = MotionSequence(np.zeros((2, 6)), 20.0, ("A", "B"))
        with pytest.raises(KeyError):
            bench.gesture_space_plot([motion], sk)
