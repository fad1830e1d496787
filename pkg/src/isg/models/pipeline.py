"""Sequential speech-then-gesture pipeline baseline.

The speech stage synthesizes a mel spectrogram; only after it completes
does the gesture stage begin: an audio-conditioned autoregressive
normalizing flow samples one pose per gesture frame, conditioned on a
sliding window of audio features (future context at the utterance end is
supplied by padding the mel with silence) and on its own recent pose
history, which starts at a static mean pose.

Stage wall-clock times are recorded so the sequentiality and latency of
the pipeline can be benchmarked against integrated models.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from isg.config import AudioGestureConfig
from isg.features.mel import MelSpectrogram
from isg.features.motion import MotionSequence, interpolate_to_times


@dataclass
class StageTimings:
    speech_start: float = 0.0
    speech_end: float = 0.0
    gesture_start: float = 0.0
    gesture_end: float = 0.0

    @property
    def speech_s(self) -> float:
        return self.speech_end - self.speech_start

    @property
    def gesture_s(self) -> float:
        return self.gesture_end - self.gesture_start

    @property
    def total_s(self) -> float:
        return self.gesture_end - self.speech_start

    def to_json(self) -> dict:
        return {"speech_s": self.speech_s, "gesture_s": self.gesture_s,
                "total_s": self.total_s, "speech_start": self.speech_start,
                "speech_end": self.speech_end,
                "gesture_start": self.gesture_start,
                "gesture_end": self.gesture_end}


class VectorActNorm(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.logs = nn.Parameter(torch.zeros(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x, reverse=False):
        if reverse:
            return x * torch.exp(-self.logs) - self.bias, -self.logs.sum()
        return (x + self.bias) * torch.exp(self.logs), self.logs.sum()


class VectorInvLinear(nn.Module):
    """Invertible full mixing over the pose vector, with an inverse cache.

    Inverse matrices are recomputed only when the parameters change
    (tracked by a version counter), which removes a per-frame matrix
    inversion from autoregressive sampling.
    """

    def __init__(self, dim):
        super().__init__()
        q, _ = torch.linalg.qr(torch.randn(dim, dim))
        self.weight = nn.Parameter(q)
        self._cache_version = -1
        self._cached_inv = None

    def _inverse_weight(self):
        version = self.weight._version
        if self._cached_inv is None or self._cache_version != version:
            self._cached_inv = torch.linalg.inv(self.weight.double()).to(
                self.weight.dtype)
            self._cache_version = version
        return self._cached_inv

    def forward(self, x, reverse=False):
        sign, logabsdet = torch.linalg.slogdet(self.weight)
        if reverse:
            return x @ self._inverse_weight().T, -logabsdet
        return x @ self.weight.T, logabsdet


class VectorCoupling(nn.Module):
    def __init__(self, dim, hidden, cond_dim, scale_cap):
        super().__init__()
        self.half = dim // 2
        self.scale_cap = scale_cap
        self.net = nn.Sequential(
            nn.Linear(self.half + cond_dim, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, 2 * (dim - self.half)))
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, x, cond, reverse=False):
        xa, xb = x[..., :self.half], x[..., self.half:]
        raw = self.net(torch.cat([xa, cond], dim=-1))
        raw_s, t = raw.chunk(2, dim=-1)
        log_s = self.scale_cap * torch.tanh(raw_s)
        if reverse:
            yb = (xb - t) * torch.exp(-log_s)
            logdet = -log_s.sum(dim=-1)
        else:
            yb = xb * torch.exp(log_s) + t
            logdet = log_s.sum(dim=-1)
        return torch.cat([xa, yb], dim=-1), logdet


class VectorPermute(nn.Module):
    """Fixed half-swap so couplings alternate which half is transformed."""

    def forward(self, x, reverse=False):
        half = x.shape[-1] // 2
        return torch.cat([x[..., half:], x[..., :half]], dim=-1), x.new_zeros(())


class AudioGestureFlow(nn.Module):
    """Audio-conditioned per-frame flow over poses with recurrent context."""

    def __init__(self, cfg: AudioGestureConfig, n_mels: int = 80):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.n_mels = n_mels
        window = cfg.context_past + cfg.context_future + 1
        self.audio_proj = nn.Linear(n_mels, cfg.audio_proj_dim)
        cond_in = cfg.audio_proj_dim * window + cfg.pose_dim * cfg.pose_history
        self.cond_rnn = nn.LSTM(cond_in, cfg.width, batch_first=True)
        self.steps = nn.ModuleList()
        for _ in range(cfg.n_flow_steps):
            self.steps.append(VectorActNorm(cfg.pose_dim))
            self.steps.append(VectorInvLinear(cfg.pose_dim))
            self.steps.append(VectorCoupling(cfg.pose_dim, cfg.coupling_hidden,
                                             cfg.width, cfg.scale_cap))
            self.steps.append(VectorPermute())
        self.register_buffer("mean_pose", torch.zeros(cfg.pose_dim))
        self.register_buffer("silence_mel", torch.full((n_mels,), float(np.log(1e-5))))

    def set_output_stats(self, mean_pose: np.ndarray,
                         silence_mel_value: float) -> None:
        self.mean_pose.copy_(torch.as_tensor(mean_pose,
                                             dtype=self.mean_pose.dtype))
        self.silence_mel.fill_(silence_mel_value)

    def _flow(self, x, cond, reverse=False):
        total = torch.zeros(x.shape[:-1], device=x.device, dtype=x.dtype)
        mods = list(self.steps)
        if reverse:
            mods = list(reversed(mods))
        for m in mods:
            if isinstance(m, VectorCoupling):
                x, ld = m(x, cond, reverse=reverse)
            else:
                x, ld = m(x, reverse=reverse)
            total = total + ld
        return x, total

    def _audio_windows(self, audio_frames: torch.Tensor) -> torch.Tensor:
        """(T, n_mels) -> (T, window * proj_dim) with edge replication."""
        cfg = self.cfg
        proj = self.audio_proj(audio_frames)
        padded = torch.cat([proj[:1].expand(cfg.context_past, -1), proj,
                            proj[-1:].expand(cfg.context_future, -1)], dim=0)
        window = cfg.context_past + cfg.context_future + 1
        return padded.unfold(0, window, 1).reshape(proj.shape[0], -1)

    def log_prob(self, poses: torch.Tensor, audio_frames: torch.Tensor
                 ) -> torch.Tensor:
        """Mean per-dimension NLL of poses (T, D) given audio at gesture fps.

        Teacher-forced: pose history context comes from the data.
        """
        cfg = self.cfg
        T = poses.shape[0]
        windows = self._audio_windows(audio_frames)
        hist = [self.mean_pose.expand(cfg.pose_history, -1).reshape(-1)]
        for t in range(1, T):
            lo = max(0, t - cfg.pose_history)
            h = poses[lo:t]
            if h.shape[0] < cfg.pose_history:
                pad = self.mean_pose.expand(cfg.pose_history - h.shape[0], -1)
                h = torch.cat([pad, h], dim=0)
            hist.append(h.reshape(-1))
        hist_t = torch.stack(hist, dim=0)
        cond_in = torch.cat([windows, hist_t], dim=-1).unsqueeze(0)
        cond, _ = self.cond_rnn(cond_in)
        z, logdet = self._flow(poses.unsqueeze(0), cond)
        log_pz = -0.5 * (z ** 2 + np.log(2 * np.pi)).sum(dim=-1)
        nll = -(log_pz + logdet).sum() / (T * cfg.pose_dim)
        return nll

    @torch.no_grad()
    def generate(self, mel: MelSpectrogram, seed: int = 0,
                 temperature: float = 1.0) -> MotionSequence:
        """Sample poses autoregressively from padded audio features.

        Input mel must be longer than the context window; the returned
        motion covers the un-padded speech duration at gesture fps.
        """
        cfg = self.cfg
        dtype = next(self.parameters()).dtype
        window = cfg.context_past + cfg.context_future + 1
        n_keep = int(round(mel.n_frames / mel.fps * cfg.gesture_fps))
        if n_keep <= window:
            raise ValueError(
                f"mel too short: {n_keep} gesture frames <= context "
                f"window {window}")
        audio = torch.as_tensor(np.asarray(mel.values), dtype=dtype)
        pad_frames_mel = int(round(cfg.silence_pad_s * mel.fps))
        silence = self.silence_mel.to(dtype).expand(pad_frames_mel, -1)
        audio = torch.cat([audio, silence], dim=0)
        # audio features at gesture fps
        times = np.arange(int(np.floor((audio.shape[0] - 1) * cfg.gesture_fps
                                       / mel.fps)) + 1) / cfg.gesture_fps
        down = interpolate_to_times(audio.cpu().numpy().astype(np.float64),
                                    mel.fps, times)
        frames_t = torch.as_tensor(down, dtype=dtype)
        windows = self._audio_windows(frames_t)
        T_total = windows.shape[0]
        gen = torch.Generator()
        gen.manual_seed(seed)
        history = [self.mean_pose.to(dtype)] * cfg.pose_history
        state = None
        poses = []
        for t in range(T_total):
            cond_in = torch.cat([windows[t], torch.cat(history, dim=-1)],
                                dim=-1).reshape(1, 1, -1)
            cond, state = self.cond_rnn(cond_in, state)
            z = temperature * torch.randn(cfg.pose_dim, generator=gen).to(dtype)
            x, _ = self._flow(z.reshape(1, 1, -1), cond, reverse=True)
            pose = x.reshape(-1)
            poses.append(pose)
            history = history[1:] + [pose]
        motion = torch.stack(poses[:n_keep], dim=0)
        return MotionSequence(motion.cpu().numpy().astype(np.float64),
                              cfg.gesture_fps)


class PipelineSynthesizer:
    """Runs speech then gesture strictly in sequence with stage timings."""

    def __init__(self, speech_model=None, gesture_model=None):
        self.speech_model = speech_model
        self.gesture_model = gesture_model

    def synthesize(self, tokens, tokenizer, mel_fps: float,
                   sample_rate: int = 22050, seed: int = 0):
        """Both stages work in the shared normalized mel space; the
        gesture stage starts only after the speech stage has returned."""
        from isg.models.speech_core import synthesize_speech

        if self.speech_model is None:
            raise RuntimeError("pipeline speech stage has no model loaded")
        if self.gesture_model is None:
            raise RuntimeError("pipeline gesture stage has no model loaded")
        timings = StageTimings()
        timings.speech_start = time.perf_counter()
        speech = synthesize_speech(self.speech_model, tokens, tokenizer,
                                   mode="free_running", mel_fps=mel_fps,
                                   sample_rate=sample_rate)
        timings.speech_end = time.perf_counter()

        timings.gesture_start = time.perf_counter()
        motion = self.gesture_model.generate(speech.mel_post, seed=seed)
        timings.gesture_end = time.perf_counter()
        return speech, motion, timings
