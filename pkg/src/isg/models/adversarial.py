"""Sequence discriminator over time-aligned speech + gesture frames.

Used in the frozen-speech training regime: because the prenet keeps its
dropout at inference, the frozen speech core emits varying
attention states for the same text, and the weighted adversarial loss
gives the gesture sub-network a supervision signal that tolerates that
variation.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from isg.config import DiscriminatorConfig

_EPS = 1e-7


class SequenceDiscriminator(nn.Module):
    """Real/fake probability for a (mel, motion) frame sequence.

    Motion must be upsampled to the mel frame rate beforehand so the two
    streams concatenate 1:1 per frame.  The output head is
    zero-initialized, so an untrained discriminator scores 0.5.
    """

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.lstm = nn.LSTM(cfg.input_dim, cfg.width,
                            num_layers=cfg.n_recurrent_layers, batch_first=True)
        self.head = nn.Linear(cfg.width, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, mel, motion):
        """mel (B, T, M) and motion (B, T, D) -> probability (B,)."""
        if mel.shape[:2] != motion.shape[:2]:
            raise ValueError(
                f"frame mismatch after alignment: mel {tuple(mel.shape)} vs "
                f"motion {tuple(motion.shape)}")
        x = torch.cat([mel, motion], dim=-1)
        if x.shape[-1] != self.cfg.input_dim:
            raise ValueError(
                f"channel count {x.shape[-1]} != configured {self.cfg.input_dim}")
        out, _ = self.lstm(x)
        logit = self.head(out[:, -1]).squeeze(-1)
        return torch.sigmoid(logit)


def upsample_motion(motion: torch.Tensor, n_frames: int) -> torch.Tensor:
    """Linear time-upsampling of (B, K, D) poses to n_frames."""
    x = motion.transpose(1, 2)
    if motion.shape[1] == 1:
        return motion.expand(-1, n_frames, -1)
    y = F.interpolate(x, size=n_frames, mode="linear", align_corners=True)
    return y.transpose(1, 2)


def gan_losses(d_real, d_fake, gan_weight: float, saturating: bool = False):
    """Original-form GAN objective with a weighted generator term.

    d_loss = -[ln d_real + ln(1 - d_fake)]
    g_loss = gan_weight * (-ln d_fake)            (non-saturating, default)
           = gan_weight * ln(1 - d_fake)          (minimax, saturating=True)

    Probabilities are clamped to [eps, 1-eps] before the logs.
    """
    if gan_weight < 0:
        raise ValueError("gan_weight must be >= 0")
    as_t = lambda v: v if torch.is_tensor(v) else torch.as_tensor(float(v))
    dr = torch.clamp(as_t(d_real), _EPS, 1.0 - _EPS)
    df = torch.clamp(as_t(d_fake), _EPS, 1.0 - _EPS)
    d_loss = -(torch.log(dr) + torch.log(1.0 - df)).mean()
    if saturating:
        g_loss = gan_weight * torch.log(1.0 - df).mean()
    else:
        g_loss = gan_weight * (-torch.log(df)).mean()
    return d_loss, g_loss
