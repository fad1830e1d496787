"""Log-mel spectrogram extraction and Griffin-Lim phase reconstruction.

The STFT here frames the signal so that exactly ``ceil(len/hop)`` frames
are produced (center-style reflection padding), which keeps mel frame
counts in an exact arithmetic relation to waveform length.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from isg.config import AudioConfig


@dataclass
class MelSpectrogram:
    """Log-magnitude mel features, frames x n_mels, at ``fps`` frames/s."""

    values: np.ndarray
    fps: float
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps

    def validate(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mel values must be finite")


def _hann(win_length: int) -> np.ndarray:
    n = np.arange(win_length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_length)


def _frame_signal(y: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Frames x n_fft view with reflection padding; ceil(len/hop) frames."""
    n = len(y)
    n_frames = int(np.ceil(n / hop))
    pad = n_fft // 2
    if n >= pad + 1:
        padded = np.pad(y, pad, mode="reflect")
    else:
        # too short to reflect a full half-window; zero-pad the remainder
        padded = np.pad(y, pad, mode="constant")
    need = (n_frames - 1) * hop + n_fft
    if len(padded) < need:
        padded = np.pad(padded, (0, need - len(padded)), mode="constant")
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return padded[idx]


def stft(y: np.ndarray, n_fft: int, hop: int, win_length: int) -> np.ndarray:
    """Complex STFT, shape (frames, n_fft//2 + 1)."""
    window = np.zeros(n_fft)
    offset = (n_fft - win_length) // 2
    window[offset:offset + win_length] = _hann(win_length)
    frames = _frame_signal(np.asarray(y, dtype=np.float64), n_fft, hop)
    return np.fft.rfft(frames * window, n=n_fft, axis=1)


def istft(spec: np.ndarray, n_fft: int, hop: int, win_length: int,
          length: int | None = None) -> np.ndarray:
    """Inverse STFT by windowed overlap-add."""
    n_frames = spec.shape[0]
    if n_frames == 0:
        return np.zeros(0 if length is None else length)
    window = np.zeros(n_fft)
    offset = (n_fft - win_length) // 2
    window[offset:offset + win_length] = _hann(win_length)
    frames = np.fft.irfft(spec, n=n_fft, axis=1) * window
    out_len = (n_frames - 1) * hop + n_fft
    y = np.zeros(out_len)
    wsum = np.zeros(out_len)
    for t in range(n_frames):
        y[t * hop:t * hop + n_fft] += frames[t]
        wsum[t * hop:t * hop + n_fft] += window ** 2
    y = y / np.maximum(wsum, 1e-10)
    pad = n_fft // 2
    y = y[pad:]
    if length is not None:
        y = y[:length] if len(y) >= length else np.pad(y, (0, length - len(y)))
    return y


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_frequencies(n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """n_mels + 2 band edges (Hz), evenly spaced on the mel scale."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int,
                   fmin: float, fmax: float) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft//2 + 1)."""
    edges = mel_frequencies(n_mels, fmin, fmax)
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    fb = np.zeros((n_mels, len(fft_freqs)))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_spectrogram(waveform: np.ndarray, config: AudioConfig) -> MelSpectrogram:
    """Log-mel features of a waveform: ln(max(mel_energy, log_floor)).

    Frame count is exactly ceil(len/hop).  An all-zero waveform is valid
    and yields every value at ln(log_floor).
    """
    y = np.asarray(waveform, dtype=np.float64)
    if y.ndim != 1 or len(y) == 0:
        raise ValueError("waveform must be a non-empty 1-D array")
    config.validate()
    mag = np.abs(stft(y, config.n_fft, config.hop_length, config.win_length))
    fb = mel_filterbank(config.sample_rate, config.n_fft, config.n_mels,
                        config.fmin, config.fmax)
    mel = mag @ fb.T
    values = np.log(np.maximum(mel, config.log_floor)).astype(np.float32)
    return MelSpectrogram(values=values, fps=config.fps,
                          sample_rate=config.sample_rate)


def mel_to_linear(mel_energy: np.ndarray, config: AudioConfig) -> np.ndarray:
    """Least-squares mel-to-linear magnitude via filterbank pseudo-inverse."""
    fb = mel_filterbank(config.sample_rate, config.n_fft, config.n_mels,
                        config.fmin, config.fmax)
    inv = np.linalg.pinv(fb)
    return np.maximum(mel_energy @ inv.T, 0.0)


def griffin_lim(mel: MelSpectrogram, n_iters: int = 32,
                config: AudioConfig | None = None, seed: int = 0) -> np.ndarray:
    """Reference vocoder: iterative phase reconstruction from a log-mel.

    Deterministic for a fixed ``seed`` (phase initialization).  Zero
    frames produce an empty waveform.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if config is None:
        hop = int(round(mel.sample_rate / mel.fps))
        config = AudioConfig(sample_rate=mel.sample_rate, n_fft=4 * hop,
                             win_length=4 * hop, hop_length=hop,
                             n_mels=mel.n_mels)
    if mel.n_frames == 0:
        return np.zeros(0, dtype=np.float32)
    mel_energy = np.exp(np.asarray(mel.values, dtype=np.float64))
    target = mel_to_linear(mel_energy, config)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(target.shape))
    length = mel.n_frames * config.hop_length
    y = istft(target * phase, config.n_fft, config.hop_length,
              config.win_length, length=length)
    for _ in range(n_iters):
        spec = stft(y, config.n_fft, config.hop_length, config.win_length)
        spec = spec[:target.shape[0]]
        angles = spec / np.maximum(np.abs(spec), 1e-12)
        y = istft(target * angles, config.n_fft, config.hop_length,
                  config.win_length, length=length)
    peak = np.max(np.abs(y))
    if peak > 1.0:
        y = y / peak
    return y.astype(np.float32)


def save_mel(mel: MelSpectrogram, path: str | Path) -> None:
    """32-bit little-endian float binary plus a JSON sidecar."""
    path = Path(path)
    values = np.ascontiguousarray(mel.values, dtype="<f4")
    path.write_bytes(values.tobytes())
    sidecar = {"frames": int(mel.n_frames), "n_mels": int(mel.n_mels),
               "fps": float(mel.fps), "sample_rate": int(mel.sample_rate)}
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as f:
        json.dump(sidecar, f)
        f.write("\n")


def load_mel(path: str | Path) -> MelSpectrogram:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json"), encoding="utf-8") as f:
        meta = json.load(f)
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    values = raw.reshape(meta["frames"], meta["n_mels"]).copy()
    return MelSpectrogram(values=values, fps=float(meta["fps"]),
                          sample_rate=int(meta.get("sample_rate", 22050)))
