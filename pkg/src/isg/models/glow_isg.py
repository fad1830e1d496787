"""Joint probabilistic text-to-(mel, motion) model with a flow decoder.

Audio and motion features at a shared 60 fps frame rate are concatenated
per frame and invertibly mapped to latents whose prior is an elementwise
Gaussian parameterized per text token; a monotonic alignment assigns
every output frame to a token.  Training maximizes the exact
change-of-variables likelihood; synthesis samples latents from predicted
durations and runs the flow in reverse.

Flow steps follow the Glow recipe: activation normalization, an
invertible channel-mixing convolution applied to interleaved channel
groups (one shared g x g weight), and an affine coupling whose scale and
shift are produced by a small conv net over half the channels plus a
per-sequence conditioning vector from the text encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from isg.config import FlowConfig
from isg.features.mel import MelSpectrogram
from isg.features.motion import MotionSequence
from isg.tokens import Tokenizer


@dataclass
class JointFrameSequence:
    """Frames x (n_mels + D_motion) matrix; mel channels come first."""

    values: np.ndarray
    split_index: int
    fps: float = 60.0

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def mel_block(self) -> np.ndarray:
        return self.values[:, :self.split_index]

    def motion_block(self) -> np.ndarray:
        return self.values[:, self.split_index:]


@dataclass
class LatentSequence:
    values: np.ndarray          # (frames, C)
    logdet: float               # accumulated log|det J| over the sequence

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class TokenPrior:
    mu: np.ndarray              # (tokens, C)
    sigma: np.ndarray           # (tokens, C), > 0
    log_durations: np.ndarray   # (tokens,)

    @property
    def n_tokens(self) -> int:
        return self.mu.shape[0]


@dataclass
class Alignment:
    """Token index per output frame; monotonic and surjective."""

    assignment: np.ndarray      # (frames,) int

    def validate(self, n_tokens: int) -> None:
        a = self.assignment
        if len(a) == 0:
            raise ValueError("empty alignment")
        d = np.diff(a)
        if np.any(d < 0) or np.any(d > 1):
            raise ValueError("alignment must advance by 0 or 1 per frame")
        if a[0] != 0 or a[-1] != n_tokens - 1:
            raise ValueError("alignment must start at token 0 and end at the last")

    def durations(self, n_tokens: int) -> np.ndarray:
        return np.bincount(self.assignment, minlength=n_tokens)


class AlignmentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# flow steps
# ---------------------------------------------------------------------------

class ActNorm(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.logs = nn.Parameter(torch.zeros(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("initialized", torch.tensor(False))

    def initialize_from(self, x):
        # x (B, C, T): set bias/scale so outputs start near zero mean, unit var
        with torch.no_grad():
            mean = x.mean(dim=(0, 2))
            std = x.std(dim=(0, 2)).clamp_min(1e-4)
            self.bias.copy_(-mean)
            self.logs.copy_(-torch.log(std))
            self.initialized.fill_(True)

    def forward(self, x, reverse=False):
        T = x.shape[-1]
        if reverse:
            y = x * torch.exp(-self.logs)[None, :, None] - self.bias[None, :, None]
            logdet = -T * self.logs.sum()
        else:
            y = (x + self.bias[None, :, None]) * torch.exp(self.logs)[None, :, None]
            logdet = T * self.logs.sum()
        return y, logdet


class InvGroupedConv(nn.Module):
    """Invertible channel mixing with one shared g x g weight.

    Channels are regrouped so that each mixing vector takes g/2 adjacent
    channels from the first half of the channel axis and the matching
    g/2 from the second half, which lets consecutive coupling layers see
    both halves.  Group size must be even.
    """

    is_orthogonal_mixer = True

    def __init__(self, channels: int, group_size: int, identity_init=False):
        super().__init__()
        if group_size % 2 or channels % group_size:
            raise ValueError(
                f"channels {channels} must be divisible by even group size "
                f"{group_size}")
        self.channels = channels
        self.g = group_size
        if identity_init:
            w = torch.eye(group_size)
        else:
            q, _ = torch.linalg.qr(torch.randn(group_size, group_size))
            w = q
        self.weight = nn.Parameter(w)

    def _regroup(self, x):
        B, C, T = x.shape
        g = self.g
        # (B, 2, C/g, g/2, T): halves, group slot, within-half member
        x = x.view(B, 2, C // g, g // 2, T)
        x = x.permute(0, 2, 1, 3, 4).reshape(B, C // g, g, T)
        return x

    def _ungroup(self, x, shape):
        B, C, T = shape
        g = self.g
        x = x.view(B, C // g, 2, g // 2, T).permute(0, 2, 1, 3, 4)
        return x.reshape(B, C, T)

    def forward(self, x, reverse=False):
        B, C, T = x.shape
        grouped = self._regroup(x)
        if reverse:
            w = torch.linalg.inv(self.weight.double()).to(x.dtype)
        else:
            w = self.weight
        mixed = torch.einsum("ij,bgjt->bgit", w, grouped)
        y = self._ungroup(mixed, (B, C, T))
        sign, logabsdet = torch.linalg.slogdet(self.weight)
        logdet = (C // self.g) * T * logabsdet
        if reverse:
            logdet = -logdet
        return y, logdet


class AffineCoupling(nn.Module):
    def __init__(self, channels: int, hidden: int, kernel: int, cond_dim: int,
                 scale_cap: float, identity_init=True):
        super().__init__()
        half = channels // 2
        self.half = half
        self.scale_cap = scale_cap
        pad = (kernel - 1) // 2
        self.pre = nn.Conv1d(half, hidden, kernel, padding=pad)
        self.cond_proj = nn.Linear(cond_dim, hidden) if cond_dim else None
        self.mid = nn.Conv1d(hidden, hidden, kernel, padding=pad)
        self.out = nn.Conv1d(hidden, 2 * (channels - half), 1)
        if identity_init:
            nn.init.zeros_(self.out.weight)
            nn.init.zeros_(self.out.bias)

    def _scale_shift(self, xa, cond):
        h = self.pre(xa)
        if self.cond_proj is not None and cond is not None:
            h = h + self.cond_proj(cond)[:, :, None]
        h = F.relu(h)
        h = F.relu(self.mid(h))
        raw = self.out(h)
        raw_s, t = raw.chunk(2, dim=1)
        log_s = self.scale_cap * torch.tanh(raw_s)
        return log_s, t

    def forward(self, x, cond=None, reverse=False):
        xa, xb = x[:, :self.half], x[:, self.half:]
        log_s, t = self._scale_shift(xa, cond)
        if reverse:
            yb = (xb - t) * torch.exp(-log_s)
            logdet = -log_s.sum(dim=(1, 2)).sum()
        else:
            yb = xb * torch.exp(log_s) + t
            logdet = log_s.sum(dim=(1, 2)).sum()
        return torch.cat([xa, yb], dim=1), logdet


class FlowStack(nn.Module):
    """Squeeze -> n x (actnorm, channel mixing, coupling) -> unsqueeze."""

    def __init__(self, cfg: FlowConfig, identity_init: bool = False):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        C = cfg.joint_channels * cfg.squeeze
        self.squeezed_channels = C
        self.actnorms = nn.ModuleList()
        self.mixers = nn.ModuleList()
        self.couplings = nn.ModuleList()
        for _ in range(cfg.n_flow_steps):
            self.actnorms.append(ActNorm(C))
            self.mixers.append(InvGroupedConv(C, cfg.group_size, identity_init))
            # couplings always start at identity (zeroed output layer), the
            # standard stable flow init; identity_init additionally makes
            # the channel mixing the identity for the whole-flow identity
            self.couplings.append(AffineCoupling(
                C, cfg.coupling_hidden, cfg.coupling_kernel,
                cfg.encoder_dim, cfg.scale_cap, identity_init=True))

    def _squeeze(self, x):
        B, C, T = x.shape
        s = self.cfg.squeeze
        x = x.view(B, C, T // s, s).permute(0, 1, 3, 2)
        return x.reshape(B, C * s, T // s)

    def _unsqueeze(self, x):
        B, Cs, T = x.shape
        s = self.cfg.squeeze
        x = x.view(B, Cs // s, s, T).permute(0, 1, 3, 2)
        return x.reshape(B, Cs // s, T * s)

    def forward(self, x, cond=None, reverse=False):
        """x (B, C, T) with T divisible by the squeeze factor."""
        if x.shape[-1] % self.cfg.squeeze:
            raise ValueError(
                f"frame count {x.shape[-1]} not divisible by squeeze "
                f"{self.cfg.squeeze}")
        total = x.new_zeros(())
        if not reverse:
            y = self._squeeze(x)
            for an, mix, cpl in zip(self.actnorms, self.mixers, self.couplings):
                y, ld = an(y)
                total = total + ld
                y, ld = mix(y)
                total = total + ld
                y, ld = cpl(y, cond)
                total = total + ld
            return self._unsqueeze(y), total
        y = self._squeeze(x)
        for an, mix, cpl in zip(reversed(self.actnorms), reversed(self.mixers),
                                reversed(self.couplings)):
            y, ld = cpl(y, cond, reverse=True)
            total = total + ld
            y, ld = mix(y, reverse=True)
            total = total + ld
            y, ld = an(y, reverse=True)
            total = total + ld
        return self._unsqueeze(y), total


def randomize_parameters(module: nn.Module, seed: int, scale: float = 1.0):
    """Fill parameters with fan-in-scaled random draws.

    Mixing weights become random orthogonal matrices; matrix/conv weights
    draw from N(0, scale/sqrt(fan_in)); vectors (biases, actnorm
    scales/offsets) from N(0, 0.3 * scale).  This is the "random
    parameters" regime used by the invertibility checks: arbitrary but
    numerically sane, like any initialization a flow would train from.
    """
    gen = torch.Generator()
    gen.manual_seed(seed)
    mixing_weights = set()
    damped = set()
    for m in module.modules():
        if getattr(m, "is_orthogonal_mixer", False):
            n = m.weight.shape[0]
            q, _ = torch.linalg.qr(
                torch.randn(n, n, generator=gen, dtype=torch.float64))
            with torch.no_grad():
                m.weight.copy_(q.to(m.weight.dtype))
            mixing_weights.add(id(m.weight))
        if hasattr(m, "scale_cap") and hasattr(m, "out"):
            damped.update(id(p) for p in m.out.parameters())
    for p in module.parameters():
        if id(p) in mixing_weights:
            continue
        with torch.no_grad():
            draw = torch.randn(p.shape, generator=gen, dtype=torch.float64)
            if p.ndim >= 2:
                fan_in = int(np.prod(p.shape[1:]))
                draw = draw * (scale / math.sqrt(fan_in))
            else:
                draw = draw * (0.1 * scale)
            if id(p) in damped:
                # keep per-step log-scales at trained-model magnitudes;
                # otherwise a deep random affine flow amplifies as
                # cosh(cap)^depth and drowns the round trip in roundoff
                draw = draw * 0.05
            p.copy_(draw.to(p.dtype))
    return module


# ---------------------------------------------------------------------------
# text encoder and duration predictor
# ---------------------------------------------------------------------------

def _sinusoidal_positions(length: int, dim: int, device, dtype):
    pos = torch.arange(length, device=device, dtype=dtype).unsqueeze(1)
    idx = torch.arange(0, dim, 2, device=device, dtype=dtype)
    angles = pos / torch.pow(torch.tensor(10000.0, dtype=dtype, device=device),
                             idx / dim)
    pe = torch.zeros(length, dim, device=device, dtype=dtype)
    pe[:, 0::2] = torch.sin(angles)
    pe[:, 1::2] = torch.cos(angles[:, :pe[:, 1::2].shape[1]])
    return pe


class EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Conv1d(dim, 2 * dim, 3, padding=1), nn.ReLU(),
            nn.Conv1d(2 * dim, dim, 3, padding=1))

    def forward(self, x):
        h = self.norm1(x)
        a, _ = self.attn(h, h, h, need_weights=False)
        x = x + a
        h = self.norm2(x).transpose(1, 2)
        return x + self.ff(h).transpose(1, 2)


class TextEncoder(nn.Module):
    """Per-token Gaussian prior parameters and duration features."""

    def __init__(self, cfg: FlowConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.encoder_dim
        self.embedding = nn.Embedding(cfg.n_symbols, d)
        self.blocks = nn.ModuleList(
            EncoderBlock(d, cfg.encoder_heads) for _ in range(cfg.encoder_layers))
        # zero init: the prior starts as N(0, 1), matching normalized data
        # passed through the near-identity initial flow
        self.stats_proj = nn.Conv1d(d, 2 * cfg.joint_channels, 1)
        nn.init.zeros_(self.stats_proj.weight)
        nn.init.zeros_(self.stats_proj.bias)

    def forward(self, ids):
        # ids (B, L) -> hidden (B, L, d), mu/logs (B, L, C)
        x = self.embedding(ids) * math.sqrt(self.cfg.encoder_dim)
        x = x + _sinusoidal_positions(x.shape[1], x.shape[2], x.device, x.dtype)
        for block in self.blocks:
            x = block(x)
        stats = self.stats_proj(x.transpose(1, 2)).transpose(1, 2)
        mu, logs = stats.chunk(2, dim=-1)
        return x, mu, logs


class DurationPredictor(nn.Module):
    def __init__(self, in_dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(in_dim, hidden, 3, padding=1), nn.ReLU(),
            nn.Conv1d(hidden, hidden, 3, padding=1), nn.ReLU(),
            nn.Conv1d(hidden, 1, 1))

    def forward(self, hidden):
        # hidden (B, L, d), gradient-stopped from the encoder
        return self.net(hidden.detach().transpose(1, 2)).squeeze(1)


# ---------------------------------------------------------------------------
# alignment and likelihood
# ---------------------------------------------------------------------------

def _frame_token_loglik(z: np.ndarray, prior: TokenPrior) -> np.ndarray:
    """(T, L) matrix of sum-over-channel Gaussian log-densities."""
    mu = np.asarray(prior.mu, dtype=np.float64)
    sigma = np.asarray(prior.sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    var = sigma ** 2
    const = -0.5 * np.sum(np.log(2.0 * np.pi * var), axis=1)        # (L,)
    diff = z[:, None, :] - mu[None, :, :]                            # (T, L, C)
    quad = -0.5 * np.sum(diff ** 2 / var[None, :, :], axis=2)        # (T, L)
    return const[None, :] + quad


def mas_align(z: LatentSequence | np.ndarray, prior: TokenPrior) -> Alignment:
    """Maximum-likelihood monotonic surjective alignment (Viterbi DP).

    Maximizes the per-frame Gaussian log-likelihood summed over frames;
    on ties the earlier token is preferred (resolved while backtracking
    from the final frame).
    """
    zv = z.values if isinstance(z, LatentSequence) else np.asarray(z)
    T = zv.shape[0]
    L = prior.n_tokens
    if T < L:
        raise AlignmentError(f"{T} frames cannot cover {L} tokens")
    ll = _frame_token_loglik(zv, prior)
    neg = -np.inf
    Q = np.full((T, L), neg)
    Q[0, 0] = ll[0, 0]
    for t in range(1, T):
        stay = Q[t - 1]
        advance = np.concatenate([[neg], Q[t - 1, :-1]])
        Q[t] = ll[t] + np.maximum(stay, advance)
    assignment = np.empty(T, dtype=np.int64)
    j = L - 1
    assignment[T - 1] = j
    for t in range(T - 1, 0, -1):
        if j > 0 and Q[t - 1, j - 1] >= Q[t - 1, j]:
            j -= 1
        assignment[t - 1] = j
    return Alignment(assignment=assignment)


def nll_loss(z: LatentSequence, prior: TokenPrior, alignment: Alignment) -> float:
    """Exact change-of-variables negative log-likelihood per dimension."""
    alignment.validate(prior.n_tokens)
    zv = np.asarray(z.values, dtype=np.float64)
    T, C = zv.shape
    mu = prior.mu[alignment.assignment]
    sigma = prior.sigma[alignment.assignment]
    log_n = (-0.5 * np.log(2.0 * np.pi * sigma ** 2)
             - (zv - mu) ** 2 / (2.0 * sigma ** 2)).sum()
    return float(-(log_n + z.logdet) / (T * C))


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------

class GlowISG(nn.Module):
    def __init__(self, cfg: FlowConfig, identity_init: bool = False):
        super().__init__()
        self.cfg = cfg
        self.encoder = TextEncoder(cfg)
        self.flow = FlowStack(cfg, identity_init=identity_init)
        self.duration = DurationPredictor(cfg.encoder_dim, cfg.duration_hidden)
        # channel-wise output statistics for de-normalization at sampling
        self.register_buffer("out_mean", torch.zeros(cfg.joint_channels))
        self.register_buffer("out_std", torch.ones(cfg.joint_channels))

    def set_output_stats(self, mean: np.ndarray, std: np.ndarray):
        self.out_mean.copy_(torch.as_tensor(mean, dtype=self.out_mean.dtype))
        self.out_std.copy_(torch.as_tensor(std, dtype=self.out_std.dtype))

    def _cond_vector(self, cond):
        """Mean-pooled text encoding used to condition the couplings."""
        if cond is None:
            return None
        if not torch.is_tensor(cond):
            cond = torch.as_tensor(np.asarray(cond),
                                   dtype=next(self.parameters()).dtype)
        if cond.ndim == 2:
            cond = cond.unsqueeze(0)
        return cond.mean(dim=1)

    def flow_forward(self, x, cond=None) -> LatentSequence:
        """Joint frames (T, C) -> latents with exact accumulated logdet."""
        values = x.values if isinstance(x, JointFrameSequence) else np.asarray(x)
        if values.shape[0] == 0:
            return LatentSequence(values=np.zeros_like(values), logdet=0.0)
        dtype = next(self.parameters()).dtype
        xt = torch.as_tensor(values, dtype=dtype).T.unsqueeze(0)
        with torch.no_grad():
            z, logdet = self.flow(xt, self._cond_vector(cond))
        return LatentSequence(values=z[0].T.cpu().numpy(),
                              logdet=float(logdet))

    def flow_inverse(self, z, cond=None) -> np.ndarray:
        """Exact inverse of flow_forward, step by step in reverse."""
        values = z.values if isinstance(z, LatentSequence) else np.asarray(z)
        if values.shape[0] == 0:
            return np.zeros_like(values)
        dtype = next(self.parameters()).dtype
        zt = torch.as_tensor(values, dtype=dtype).T.unsqueeze(0)
        with torch.no_grad():
            x, _ = self.flow(zt, self._cond_vector(cond), reverse=True)
        return x[0].T.cpu().numpy()

    def prior(self, ids: torch.Tensor) -> tuple[torch.Tensor, ...]:
        hidden, mu, logs = self.encoder(ids)
        log_dur = self.duration(hidden)
        return hidden, mu, logs, log_dur

    def token_prior(self, ids: torch.Tensor) -> TokenPrior:
        with torch.no_grad():
            _, mu, logs, log_dur = self.prior(ids)
        return TokenPrior(mu=mu[0].cpu().numpy().astype(np.float64),
                          sigma=np.exp(logs[0].cpu().numpy().astype(np.float64)),
                          log_durations=log_dur[0].cpu().numpy().astype(np.float64))

    def predict_durations(self, ids: torch.Tensor, length_scale: float = 1.0,
                          durations: np.ndarray | None = None) -> np.ndarray:
        """Per-token frame counts: max(1, round(duration * length_scale))."""
        if durations is None:
            with torch.no_grad():
                hidden, _, _, log_dur = self.prior(ids)
            durations = np.exp(log_dur[0].cpu().numpy().astype(np.float64))
        frames = np.maximum(1, np.round(durations * length_scale).astype(int))
        return frames

    @torch.no_grad()
    def sample(self, tokens, tokenizer: Tokenizer, temperature: float = 0.7,
               length_scale: float = 0.9, seed: int = 0,
               durations: np.ndarray | None = None
               ) -> tuple[MelSpectrogram, MotionSequence]:
        """Draw (mel, motion) for a token sequence.

        z ~ N(mu_A, (temperature * sigma_A)^2) under the duration-derived
        alignment, decoded through the inverse flow; deterministic given
        the seed, and exactly the prior mean at temperature 0.
        """
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        ids = encode_for_flow(tokens, tokenizer, self.cfg.add_blank)
        ids_t = torch.tensor([ids], dtype=torch.long)
        hidden, mu, logs, log_dur = self.prior(ids_t)
        if durations is None:
            durations = np.exp(log_dur[0].cpu().numpy().astype(np.float64))
        frames = np.maximum(1, np.round(durations * length_scale).astype(int))
        if frames.sum() % self.cfg.squeeze:
            frames[-1] += self.cfg.squeeze - frames.sum() % self.cfg.squeeze
        idx = np.repeat(np.arange(len(ids)), frames)
        dtype = next(self.parameters()).dtype
        mu_f = mu[0][idx]
        sigma_f = torch.exp(logs[0][idx])
        gen = torch.Generator()
        gen.manual_seed(seed)
        eps = torch.randn(mu_f.shape, generator=gen).to(dtype)
        z = mu_f + temperature * sigma_f * eps
        x, _ = self.flow(z.T.unsqueeze(0), self._cond_vector(hidden[0]),
                         reverse=True)
        joint = x[0].T * self.out_std + self.out_mean
        joint = joint.cpu().numpy().astype(np.float64)
        n_mels = self.cfg.n_mels
        mel = MelSpectrogram(values=joint[:, :n_mels].astype(np.float32),
                             fps=60.0, sample_rate=24000)
        motion = MotionSequence(
            joint[:, n_mels:n_mels + self.cfg.motion_dim], fps=60.0)
        return mel, motion


def encode_for_flow(tokens, tokenizer: Tokenizer, add_blank: bool) -> list[int]:
    """Token ids with optional blank (pad id) interleaving."""
    ids = tokenizer.encode(tokens)
    if not add_blank:
        return ids
    out = [tokenizer.pad_id]
    for i in ids:
        out.extend([i, tokenizer.pad_id])
    return out
