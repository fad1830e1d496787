"""Composite integrated model: speech core + gesture sub-network.

The gesture decoder consumes every ``frame_ratio``-th attention-recurrence
state (or generated mel frame, for the ablation input) plus the previous
pose.  The speech core is left architecturally untouched; integration
happens purely through the tapped states.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from isg.config import GestureDecoderConfig, SpeechCoreConfig
from isg.features.motion import MotionSequence
from isg.models.gesture import GestureDecoder
from isg.models.speech_core import SpeechCore


class TacotronISG(nn.Module):
    def __init__(self, speech_cfg: SpeechCoreConfig,
                 gesture_cfg: GestureDecoderConfig):
        super().__init__()
        expected = (speech_cfg.attention_rnn_dim
                    if gesture_cfg.input_source == "attention_states"
                    else speech_cfg.n_mels)
        if gesture_cfg.input_dim != expected:
            raise ValueError(
                f"gesture input_dim {gesture_cfg.input_dim} does not match "
                f"{gesture_cfg.input_source} width {expected}")
        self.speech_core = SpeechCore(speech_cfg)
        self.gesture = GestureDecoder(gesture_cfg)
        self.gesture_cfg = gesture_cfg
        self.register_buffer("mean_pose", torch.zeros(gesture_cfg.pose_dim))

    def set_mean_pose(self, pose: np.ndarray) -> None:
        self.mean_pose.copy_(torch.as_tensor(pose, dtype=self.mean_pose.dtype))

    def init_pose(self) -> torch.Tensor:
        if self.gesture_cfg.init_pose == "zeros":
            return torch.zeros_like(self.mean_pose)
        return self.mean_pose

    def gesture_inputs(self, speech_out: dict) -> torch.Tensor:
        """Every ratio-th attention state (or mel frame) from a speech pass."""
        ratio = self.gesture_cfg.frame_ratio
        if self.gesture_cfg.input_source == "attention_states":
            return speech_out["attn_states"][:, ::ratio]
        return speech_out["mel_post"][:, ::ratio]

    def forward(self, ids, lengths, target_mels, teacher_poses=None,
                p_teacher: float = 1.0,
                generator: torch.Generator | None = None) -> dict:
        """Teacher-forced joint pass; gesture runs on tapped states."""
        out = self.speech_core(ids, lengths, target_mels)
        inputs = self.gesture_inputs(out)
        init = self.init_pose().to(inputs.dtype)
        out["gesture"] = self.gesture(inputs, init, teacher_poses, p_teacher,
                                      generator)
        return out

    @torch.no_grad()
    def infer(self, ids) -> dict:
        """Free-running speech followed by free-running gesture."""
        out = self.speech_core.infer(ids)
        inputs = self.gesture_inputs(out)
        init = self.init_pose().to(inputs.dtype)
        out["gesture"] = self.gesture(inputs, init)
        return out

    def infer_motion(self, ids, mel_fps: float) -> tuple[dict, MotionSequence]:
        out = self.infer(ids)
        fps = mel_fps / (self.speech_core.cfg.n_frames_per_step
                         * self.gesture_cfg.frame_ratio)
        motion = MotionSequence(
            out["gesture"][0].cpu().numpy().astype(np.float64), fps)
        return out, motion
