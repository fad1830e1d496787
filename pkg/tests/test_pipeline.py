"""Pipeline baseline: sequencing, timing bookkeeping, conditional flow."""

import numpy as np
import pytest
import torch

from isg.config import toy_audio_gesture_config, toy_speech_config
from isg.features.mel import MelSpectrogram
from isg.features.motion import MotionSequence
from isg.models.glow_isg import randomize_parameters
from isg.models.pipeline import (
    AudioGestureFlow,
    PipelineSynthesizer,
    StageTimings,
)
from isg.models.speech_core import SpeechCore
from isg.tokens import Tokenizer

MEL_FPS = 22050 / 256


def norm_mel(frames, n_mels=20, seed=0):
    rng = np.random.default_rng(seed)
    return MelSpectrogram(values=rng.normal(size=(frames, n_mels))
                          .astype(np.float32), fps=MEL_FPS, sample_rate=22050)


@pytest.fixture(scope="module")
def gesture_model():
    torch.manual_seed(0)
    return AudioGestureFlow(toy_audio_gesture_config(pose_dim=6), n_mels=20)


class MeanPoseStub:
    """Gesture-stage stand-in returning the mean pose for every frame."""

    def __init__(self, pose, fps=20.0):
        self.pose = np.asarray(pose)
        self.fps = fps

    def generate(self, mel, seed=0, temperature=1.0):
        n = int(round(mel.n_frames / mel.fps * self.fps))
        return MotionSequence(np.tile(self.pose, (n, 1)), self.fps)


class TestAudioGestureFlow:
    def test_same_seed_same_motion(self, gesture_model):
        mel = norm_mel(120)
        a = gesture_model.generate(mel, seed=5)
        b = gesture_model.generate(mel, seed=5)
        assert np.array_equal(a.values, b.values)

    def test_different_seed_differs(self, gesture_model):
        mel = norm_mel(120)
        a = gesture_model.generate(mel, seed=5)
        b = gesture_model.generate(mel, seed=6)
        assert not np.array_equal(a.values, b.values)

    def test_output_frames_cover_unpadded_speech(self, gesture_model):
        mel = norm_mel(130)
        motion = gesture_model.generate(mel, seed=0)
        expected = int(round(130 / MEL_FPS * 20.0))
        assert motion.n_frames == expected
        assert motion.fps == 20.0
        assert abs(motion.duration_s - mel.duration_s) <= 1 / 20.0 + 1e-9

    def test_too_short_mel_rejected(self, gesture_model):
        # 2 mel frames -> under one gesture frame: below the context window
        with pytest.raises(ValueError, match="context window"):
            gesture_model.generate(norm_mel(2), seed=0)

    def test_flow_steps_invert(self, gesture_model):
        model = AudioGestureFlow(toy_audio_gesture_config(pose_dim=6),
                                 n_mels=20)
        randomize_parameters(model, 3)
        cond = torch.randn(1, 4, model.cfg.width)
        x = torch.randn(1, 4, 6)
        z, ld = model._flow(x, cond)
        xr, ld_rev = model._flow(z, cond, reverse=True)
        assert (x - xr).abs().max().item() < 1e-4
        assert abs((ld + ld_rev).sum().item()) < 1e-3

    def test_inverse_cache_invalidates_on_parameter_change(self):
        from isg.models.pipeline import VectorInvLinear
        layer = VectorInvLinear(4)
        inv1 = layer._inverse_weight().clone()
        x = torch.randn(2, 4)
        y, _ = layer(x)
        back, _ = layer(y, reverse=True)
        assert (x - back).abs().max() < 1e-5
        with torch.no_grad():
            layer.weight.mul_(2.0)     # in-place: bumps the version counter
        inv2 = layer._inverse_weight()
        assert not torch.allclose(inv1, inv2)
        y, _ = layer(x)
        back, _ = layer(y, reverse=True)
        assert (x - back).abs().max() < 1e-5

    def test_log_prob_finite_and_trainable(self, gesture_model):
        poses = torch.randn(40, 6)
        audio = torch.randn(40, 20)
        nll = gesture_model.log_prob(poses, audio)
        assert torch.isfinite(nll)
        nll.backward()
        grads = [p.grad for p in gesture_model.parameters()
                 if p.grad is not None]
        assert any(g.abs().max() > 0 for g in grads)
        gesture_model.zero_grad()


class TestPipelineSynthesizer:
    @pytest.fixture(scope="class")
    def speech(self):
        torch.manual_seed(0)
        tok = Tokenizer()
        cfg = toy_speech_config(tok.n_symbols, n_mels=20)
        cfg.stop_threshold = 1.1
        cfg.max_decoder_steps = 60   # force a fixed-length decode
        return SpeechCore(cfg), tok

    def test_missing_stage_identified(self, speech, gesture_model):
        model, tok = speech
        with pytest.raises(RuntimeError, match="speech stage"):
            PipelineSynthesizer(None, gesture_model).synthesize(
                list("bah"), tok, MEL_FPS)
        with pytest.raises(RuntimeError, match="gesture stage"):
            PipelineSynthesizer(model, None).synthesize(
                list("bah"), tok, MEL_FPS)

    def test_sequential_timing_and_bookkeeping(self, speech, gesture_model):
        model, tok = speech
        pipe = PipelineSynthesizer(model, gesture_model)
        out, motion, timings = pipe.synthesize(list("bah dee"), tok, MEL_FPS)
        assert timings.gesture_start >= timings.speech_end
        assert timings.total_s >= timings.speech_s + timings.gesture_s - 1e-9

    def test_motion_duration_tracks_speech(self, speech, gesture_model):
        model, tok = speech
        pipe = PipelineSynthesizer(model, gesture_model)
        out, motion, _ = pipe.synthesize(list("bah dee"), tok, MEL_FPS)
        speech_dur = out.mel_post.n_frames / MEL_FPS
        assert abs(motion.duration_s - speech_dur) <= 1 / 20.0 + 1e-9

    def test_stub_gesture_model_gives_constant_mean_pose(self, speech):
        model, tok = speech
        mean_pose = np.array([0.1, -0.2, 0.3, 0.0, 0.5, -0.4])
        pipe = PipelineSynthesizer(model, MeanPoseStub(mean_pose))
        _, motion, _ = pipe.synthesize(list("bah"), tok, MEL_FPS)
        assert np.allclose(motion.values, mean_pose[None, :])


class TestStageTimings:
    def test_json_round_trip_fields(self):
        t = StageTimings(speech_start=1.0, speech_end=2.5, gesture_start=2.6,
                         gesture_end=4.0)
        d = t.to_json()
        assert d["speech_s"] == pytest.approx(1.5)
        assert d["gesture_s"] == pytest.approx(1.4)
        assert d["total_s"] == pytest.approx(3.0)
