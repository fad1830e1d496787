"""Motion sequences: exponential-map pose matrices with a frame rate.

Includes linear-time resampling, Gaussian output smoothing, CSV
persistence, and the audio-energy envelope used to couple synthetic
motion to synthetic speech.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_AXES = ("rx", "ry", "rz")


@dataclass
class MotionSequence:
    """Frames x (3 * joints) exponential-map channels at ``fps``."""

    values: np.ndarray
    fps: float
    joint_names: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("motion values must be 2-D (frames, channels)")
        if self.joint_names and self.values.shape[1] != 3 * len(self.joint_names):
            raise ValueError(
                f"{self.values.shape[1]} channels inconsistent with "
                f"{len(self.joint_names)} joints")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps

    def validate(self, max_angle: float = np.pi + 1e-3) -> None:
        if not np.all(np.isfinite(self.values)):
            raise ValueError("motion values must be finite")
        if self.joint_names:
            per_joint = self.values.reshape(self.n_frames, -1, 3)
            mags = np.linalg.norm(per_joint, axis=-1)
            if mags.size and mags.max() >= max_angle:
                raise ValueError(
                    f"exponential-map magnitude {mags.max():.4f} exceeds pi")

    def channel_names(self) -> list[str]:
        if not self.joint_names:
            return [f"ch{i}" for i in range(self.n_channels)]
        return [f"{j}_{a}" for j in self.joint_names for a in _AXES]


def interpolate_to_times(values: np.ndarray, fps_in: float,
                         times: np.ndarray) -> np.ndarray:
    """Per-channel linear interpolation at arbitrary times (edge-clamped)."""
    n = values.shape[0]
    t_in = np.arange(n) / fps_in
    out = np.empty((len(times), values.shape[1]))
    for c in range(values.shape[1]):
        out[:, c] = np.interp(times, t_in, values[:, c])
    return out


def resample_motion(motion: MotionSequence, fps_out: float) -> MotionSequence:
    """Linear per-channel resampling on the time axis.

    The output covers the span between the first and last input samples:
    n_out = floor((n_in - 1) * fps_out / fps_in) + 1, so total duration is
    preserved to within one output frame.  A single-frame input yields
    that frame unchanged.
    """
    if fps_out <= 0:
        raise ValueError("fps_out must be positive")
    n_in = motion.n_frames
    if n_in == 0:
        return MotionSequence(motion.values.copy(), fps_out, motion.joint_names)
    if fps_out == motion.fps:
        return MotionSequence(motion.values.copy(), fps_out, motion.joint_names)
    n_out = int(np.floor((n_in - 1) * fps_out / motion.fps)) + 1
    times = np.arange(n_out) / fps_out
    values = interpolate_to_times(motion.values, motion.fps, times)
    return MotionSequence(values, fps_out, motion.joint_names)


def gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    """Normalized Gaussian taps over an odd window."""
    if window % 2 != 1:
        raise ValueError("window must be odd")
    half = window // 2
    k = np.arange(-half, half + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (k / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_smooth(motion: MotionSequence, window: int = 3, stride: int = 1,
                    sigma: float = 1.0) -> MotionSequence:
    """Sliding-window Gaussian smoothing per channel.

    With stride 1 the output has the input's length.  Taps that fall
    outside the sequence reuse the boundary frame, so a constant
    sequence is returned unchanged and the kernel always sums to 1.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    kernel = gaussian_kernel(window, sigma)
    half = window // 2
    x = motion.values
    n = x.shape[0]
    if n == 0:
        return MotionSequence(x.copy(), motion.fps / stride, motion.joint_names)
    padded = np.concatenate([np.repeat(x[:1], half, axis=0), x,
                             np.repeat(x[-1:], half, axis=0)], axis=0)
    out = np.zeros_like(x)
    for k in range(window):
        out += kernel[k] * padded[k:k + n]
    if stride > 1:
        out = out[::stride]
    return MotionSequence(out, motion.fps / stride, motion.joint_names)


def audio_energy_envelope(waveform: np.ndarray, sample_rate: int,
                          fps: float, n_frames: int | None = None) -> np.ndarray:
    """Frame-level RMS energy of a waveform at ``fps`` frames/second."""
    y = np.asarray(waveform, dtype=np.float64)
    hop = sample_rate / fps
    if n_frames is None:
        n_frames = int(round(len(y) / hop))
    window = max(1, int(round(hop)))
    env = np.empty(n_frames)
    for t in range(n_frames):
        center = int(round(t * hop))
        lo = max(0, center - window)
        hi = min(len(y), center + window)
        seg = y[lo:hi]
        env[t] = np.sqrt(np.mean(seg ** 2)) if len(seg) else 0.0
    return env


def save_motion_csv(motion: MotionSequence, path: str | Path) -> None:
    """One row per frame; header row names every channel."""
    header = ",".join(motion.channel_names())
    np.savetxt(path, motion.values, delimiter=",", header=header,
               comments="", fmt="%.8f")


def load_motion_csv(path: str | Path, fps: float) -> MotionSequence:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
    names = header.split(",")
    values = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if values.shape[1] != len(names):
        raise ValueError(f"{path}: header names {len(names)} channels, "
                         f"rows have {values.shape[1]}")
    joint_names: tuple[str, ...] = ()
    if len(names) % 3 == 0:
        candidates = [n.rsplit("_", 1) for n in names]
        if all(len(c) == 2 and c[1] in _AXES for c in candidates):
            joints = [candidates[i][0] for i in range(0, len(names), 3)]
            if all(candidates[3 * i + k][0] == joints[i]
                   for i in range(len(joints)) for k in range(3)):
                joint_names = tuple(joints)
    return MotionSequence(values, fps, joint_names)
