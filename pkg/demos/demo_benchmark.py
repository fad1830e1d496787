"""
Benchmarking: parameter counts, timing with confidence intervals, motion
========================================================================

Reproduces the mechanical side of the model comparison: exact parameter
accounting (the reference speech core lands near 28.19M), serial synthesis
timing with Student-t 95% confidence intervals and strict stage
sequencing for the pipeline, per-channel motion statistics, and the
gesture-space visualization colored by limb group.

Run:  python3 demos/demo_benchmark.py
"""

import tempfile
from pathlib import Path

import numpy as np
import torch

from isg import bench
from isg.config import (
    SpeechCoreConfig,
    toy_audio_gesture_config,
    toy_speech_config,
)
from isg.features.mel import MelSpectrogram
from isg.features.motion import MotionSequence
from isg.features.skeleton import toy_skeleton
from isg.models.pipeline import AudioGestureFlow, PipelineSynthesizer
from isg.models.speech_core import SpeechCore
from isg.tokens import Tokenizer

torch.manual_seed(0)
work = Path(tempfile.mkdtemp(prefix="isg_bench_"))
tokenizer = Tokenizer()

# --- parameter accounting ----------------------------------------------------
print("single 4->3 affine layer with bias:",
      bench.count_parameters(torch.nn.Linear(4, 3)), "parameters")
reference = SpeechCore(SpeechCoreConfig(n_symbols=tokenizer.n_symbols))
n_ref = bench.count_parameters(reference)
print(f"reference speech core: {n_ref/1e6:.2f}M parameters "
      f"(28.19M published figure, vocabulary-size dependent)")
del reference

speech = SpeechCore(toy_speech_config(tokenizer.n_symbols, n_mels=20))
gesture = AudioGestureFlow(toy_audio_gesture_config(pose_dim=30), n_mels=20)
n_speech = bench.count_parameters(speech)
n_gesture = bench.count_parameters(gesture)
n_pipe = bench.count_parameters([speech, gesture])
print(f"toy pipeline: {n_speech} + {n_gesture} = {n_pipe} "
      f"(additivity exact: {n_pipe == n_speech + n_gesture})")

# --- Student-t confidence interval mechanics ---------------------------------
mean, half = bench.mean_ci([1.0, 2.0, 3.0])
print(f"\nsamples [1,2,3]s -> mean {mean:.3f}s, 95% CI half-width {half:.3f}s")

# --- timing a (toy, untrained) pipeline --------------------------------------
speech.cfg.stop_threshold = 1.1
speech.cfg.max_decoder_steps = 100   # fixed-length decode for the demo


class _Run:
    def __init__(self, duration_s, timings):
        self.duration_s = duration_s
        self.timings = timings


pipe = PipelineSynthesizer(speech, gesture)


def synthesize(text):
    out, motion, timings = pipe.synthesize(tokenizer.tokenize(text), tokenizer,
                                           mel_fps=22050 / 256)
    return _Run(out.mel_post.n_frames / out.mel_post.fps, timings)


report = bench.time_synthesis(synthesize, ["bah dee", "goh kay loo"],
                              n_repeats=2, model_name="pipeline-toy")
print(f"pipeline-toy: {report.mean_s:.3f}±{report.ci_half_width_s:.3f}s over "
      f"{report.n_runs} runs; stages {report.stage_means}")
sequential = all(s["gesture_start"] >= s["speech_end"]
                 for s in report.stage_timings)
print(f"gesture stage always starts after the speech stage ends: {sequential}")

# --- motion statistics and the gesture-space plot ----------------------------
rng = np.random.default_rng(0)
sk = toy_skeleton()
t = np.linspace(0, 2 * np.pi, 80)[:, None]
values = 0.25 * np.sin(t + rng.uniform(0, 2, 3 * sk.n_joints))
motion = MotionSequence(values, 20.0, sk.joint_names)
stats = bench.motion_stats(motion)
print(f"\nmotion range (mean over channels) {stats['range_mean']:.3f}, "
      f"variation {stats['variation']:.4f}")
bench.gesture_space_plot([motion], sk, out_png=work / "gesture_space.png",
                         out_csv=work / "gesture_space.csv")
print(f"wrote {work / 'gesture_space.png'} (right arm red, left arm green, "
      "torso blue)")
