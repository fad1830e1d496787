"""
The attention-state tap and scheduled sampling
==============================================

Shows how the joint autoregressive model wires its two halves together:
the speech core emits one attention-recurrence hidden state per decoder
step, the gesture sub-network consumes every 4th of those states (a 4:1
frame-rate match) plus its own previous pose, and scheduled sampling
anneals the teacher-forcing probability across epochs.

Run:  python3 demos/demo_attention_gesture_tap.py
"""

import numpy as np
import torch

from isg.config import SamplingSchedule, toy_gesture_config, toy_speech_config
from isg.models.gesture import (
    generate_gesture,
    select_attention_frames,
    teacher_forcing_probability,
)
from isg.models.speech_core import SpeechCore, synthesize_speech
from isg.models.tacotron_isg import TacotronISG
from isg.tokens import Tokenizer

torch.manual_seed(0)
tokenizer = Tokenizer()

# --- a toy speech core, teacher-forced over a fake target -------------------
speech_cfg = toy_speech_config(tokenizer.n_symbols, n_mels=20)
speech = SpeechCore(speech_cfg)
target = np.random.default_rng(0).normal(size=(48, 20)).astype(np.float32)
out = synthesize_speech(speech, list("bah dee goh"), tokenizer,
                        mode="teacher_forced", target_mel=target)
print(f"speech: {out.mel_post.n_frames} mel frames, attention tap "
      f"{out.attn.states.shape} at {out.attn.fps:.2f} fps")
print(f"alignment rows sum to 1: "
      f"{np.allclose(out.alignment_matrix.sum(axis=1), 1.0, atol=1e-5)}")

# --- 4:1 frame-rate matching ------------------------------------------------
selected = select_attention_frames(out.attn, ratio=4)
print(f"\nselect every 4th state: {out.attn.n_steps} -> {selected.n_steps} "
      f"frames (= ceil({out.attn.n_steps}/4)), {selected.fps:.2f} fps")

# --- the gesture sub-network ------------------------------------------------
gesture_cfg = toy_gesture_config(pose_dim=30,
                                 input_dim=speech_cfg.attention_rnn_dim)
isg = TacotronISG(speech_cfg, gesture_cfg)
motion = generate_gesture(isg.gesture, selected, np.zeros(30))
print(f"\ngesture decoder: one pose per selected frame -> "
      f"{motion.values.shape} at {motion.fps:.2f} fps")

# free running is deterministic; the speech core above it is not (its
# prenet keeps dropout active at synthesis time, the coupling that the
# frozen-speech training regime compensates for with a discriminator)
again = generate_gesture(isg.gesture, selected, np.zeros(30))
print(f"free-running gesture deterministic: "
      f"{np.array_equal(motion.values, again.values)}")

# --- scheduled sampling -----------------------------------------------------
schedule = SamplingSchedule()
print("\nteacher-forcing probability by epoch:")
for epoch in (0, 4, 5, 15, 25, 35, 45, 60):
    p = teacher_forcing_probability(epoch, schedule)
    print(f"  epoch {epoch:3d}: p = {p:.3f}")
print("holds at 1.0 for 5 epochs, linear to 0.2 over 40, constant after.")
