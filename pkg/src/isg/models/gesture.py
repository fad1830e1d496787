"""Autoregressive gesture sub-network and its scheduled-sampling policy.

The decoder consumes every ``frame_ratio``-th attention-recurrence state
of the speech core (or, as an ablation, every ratio-th generated mel
frame) together with the previous pose, and emits one pose per selected
input frame.  No dropout anywhere in this sub-network, so free-running
generation is deterministic given its inputs.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from isg.config import GestureDecoderConfig, SamplingSchedule
from isg.features.motion import MotionSequence
from isg.models.speech_core import AttentionStateSequence


def select_attention_frames(attn: AttentionStateSequence,
                            ratio: int) -> AttentionStateSequence:
    """Every ratio-th state (indices 0, ratio, 2*ratio, ...).

    Output length is ceil(steps / ratio); the frame rate drops by the
    same factor.
    """
    if ratio < 1 or int(ratio) != ratio:
        raise ValueError("ratio must be an integer >= 1")
    return AttentionStateSequence(states=attn.states[::ratio],
                                  fps=attn.fps / ratio)


def select_input_frames(values, ratio: int):
    """Array twin of select_attention_frames for the mel-input ablation."""
    if ratio < 1 or int(ratio) != ratio:
        raise ValueError("ratio must be an integer >= 1")
    return values[::ratio]


def teacher_forcing_probability(epoch: int, schedule: SamplingSchedule) -> float:
    """p_start until hold_epochs, then linear to p_end over decay_epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    schedule.validate()
    if epoch < schedule.hold_epochs:
        return schedule.p_start
    progress = (epoch - schedule.hold_epochs) / schedule.decay_epochs
    if progress >= 1.0:
        return schedule.p_end
    return schedule.p_start + progress * (schedule.p_end - schedule.p_start)


class GestureDecoder(nn.Module):
    def __init__(self, cfg: GestureDecoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.cells = nn.ModuleList()
        in_dim = cfg.input_dim + cfg.pose_dim
        for _ in range(cfg.n_recurrent_layers):
            self.cells.append(nn.LSTMCell(in_dim, cfg.width))
            in_dim = cfg.width
        # zero-initialized output head: a freshly attached sub-network
        # starts silent instead of shocking the speech core's attention
        # with garbage gradients during joint fine-tuning
        self.proj = nn.Linear(cfg.width, cfg.pose_dim)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, inputs, init_pose, teacher_poses=None, p_teacher=0.0,
                generator: torch.Generator | None = None):
        """Run the decoder over ``inputs`` (B, K, input_dim).

        Scheduled sampling: at each step the ground-truth previous pose
        is fed with probability ``p_teacher`` (independent per step and
        batch element), otherwise the decoder's own previous output.
        With ``teacher_poses=None`` the decoder always feeds back its own
        output (free running).
        """
        B, K, _ = inputs.shape
        if init_pose.shape[-1] != self.cfg.pose_dim:
            raise ValueError(
                f"init pose dim {init_pose.shape[-1]} != configured "
                f"{self.cfg.pose_dim}")
        dev, dt = inputs.device, inputs.dtype
        h = [torch.zeros(B, self.cfg.width, device=dev, dtype=dt)
             for _ in self.cells]
        c = [torch.zeros(B, self.cfg.width, device=dev, dtype=dt)
             for _ in self.cells]
        prev = init_pose.expand(B, -1) if init_pose.ndim == 1 else init_pose
        outputs = []
        for t in range(K):
            x = torch.cat([inputs[:, t], prev], dim=-1)
            for i, cell in enumerate(self.cells):
                h[i], c[i] = cell(x, (h[i], c[i]))
                x = h[i]
            pose = self.proj(x)
            outputs.append(pose)
            if teacher_poses is not None and p_teacher >= 1.0:
                prev = teacher_poses[:, t]    # exact teacher forcing, no draws
            elif teacher_poses is not None and p_teacher > 0.0:
                coin = torch.rand(B, 1, device=dev, generator=generator)
                use_teacher = (coin < p_teacher).to(dt)
                prev = use_teacher * teacher_poses[:, t] + (1 - use_teacher) * pose
            else:
                prev = pose
        return torch.stack(outputs, dim=1)


def generate_gesture(model: GestureDecoder, inputs: AttentionStateSequence,
                     init_pose: np.ndarray, mode: str = "free_running",
                     p_teacher: float = 1.0,
                     teacher_poses: np.ndarray | None = None,
                     seed: int | None = None) -> MotionSequence:
    """One pose per input frame; output fps equals the input fps.

    mode "scheduled" draws a per-frame Bernoulli(p_teacher) choice
    between the ground-truth and self-generated previous pose;
    "free_running" always feeds back the decoder's own output.
    """
    if inputs.n_steps == 0:
        raise ValueError("inputs must be non-empty")
    dtype = next(model.parameters()).dtype
    states = torch.as_tensor(np.asarray(inputs.states), dtype=dtype).unsqueeze(0)
    pose0 = torch.as_tensor(np.asarray(init_pose), dtype=dtype).reshape(1, -1)
    gen = None
    if seed is not None:
        gen = torch.Generator()
        gen.manual_seed(seed)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            if mode == "scheduled":
                if teacher_poses is None:
                    raise ValueError("scheduled mode requires teacher poses")
                teacher = torch.as_tensor(np.asarray(teacher_poses),
                                          dtype=dtype).unsqueeze(0)
                out = model(states, pose0, teacher, p_teacher, gen)
            elif mode == "free_running":
                out = model(states, pose0)
            else:
                raise ValueError(f"unknown mode {mode!r}")
    finally:
        model.train(was_training)
    return MotionSequence(out[0].cpu().numpy().astype(np.float64), inputs.fps)


def gesture_loss(pred, target):
    """Mean squared error over frames x channels."""
    if isinstance(pred, MotionSequence):
        pred = torch.as_tensor(pred.values)
    if isinstance(target, MotionSequence):
        target = torch.as_tensor(target.values)
    if pred.shape != target.shape:
        raise ValueError(
            f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return F.mse_loss(pred, target)


def masked_gesture_loss(pred, target, frame_mask):
    """MSE restricted to valid frames of a padded batch."""
    if pred.shape != target.shape:
        raise ValueError(
            f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    m = frame_mask.to(pred.dtype)
    denom = m.sum() * pred.shape[-1]
    return (((pred - target) ** 2) * m.unsqueeze(-1)).sum() / denom
