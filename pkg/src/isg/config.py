"""Configuration dataclasses and resolved-config snapshots.

Two audio profiles are used throughout:

* ``tacotron``: 22050 Hz, hop 256 -> mel rate 86.1328125 fps.  Gesture
  targets run at exactly a quarter of that rate so the 4:1 frame matching
  between attention steps and gesture frames is exact.
* ``flow``: 24000 Hz, hop 400 -> exactly 60 fps for both the mel and
  motion channels of the joint flow model.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Raised for inconsistent configuration values."""


@dataclass
class AudioConfig:
    sample_rate: int = 22050
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-5

    @property
    def fps(self) -> float:
        return self.sample_rate / self.hop_length

    def validate(self) -> None:
        if self.hop_length <= 0 or self.n_fft <= 0:
            raise ConfigError("hop_length and n_fft must be positive")
        if self.win_length > self.n_fft:
            raise ConfigError("win_length must not exceed n_fft")
        if self.fps * self.hop_length != self.sample_rate:
            raise ConfigError(
                f"fps*hop must equal sample_rate exactly; got hop={self.hop_length} "
                f"sample_rate={self.sample_rate}"
            )
        if not 0 < self.fmin < self.sample_rate / 2 + 1e-9 and self.fmin != 0:
            raise ConfigError("fmin out of range")
        if self.fmax > self.sample_rate / 2:
            raise ConfigError("fmax above Nyquist")


def flow_audio_config() -> AudioConfig:
    """60 fps audio front-end used by the joint flow model."""
    return AudioConfig(sample_rate=24000, n_fft=1600, win_length=1600,
                       hop_length=400, n_mels=80, fmax=8000.0)


@dataclass
class DataConfig:
    audio: AudioConfig = field(default_factory=AudioConfig)
    motion_fps: float = 60.0          # frame rate of motion CSV files
    max_duration_s: float = 11.0      # augmented-utterance cap
    align_tolerance_s: float = 0.1    # audio/motion duration mismatch allowed
    tokenizer_mode: str = "char"

    def validate(self) -> None:
        self.audio.validate()
        if self.max_duration_s <= 0:
            raise ConfigError("max_duration_s must be positive")


@dataclass
class SyntheticConfig:
    """Synthetic paired-corpus generator settings."""

    sample_rate: int = 22050
    motion_fps: float = 60.0
    words_per_group: tuple[int, int] = (2, 4)
    groups_per_utterance: tuple[int, int] = (1, 2)
    word_duration_s: tuple[float, float] = (0.14, 0.24)
    word_gap_s: tuple[float, float] = (0.03, 0.05)
    breath_gap_s: tuple[float, float] = (0.20, 0.30)
    train_fraction: float = 0.8
    val_fraction: float = 0.1


@dataclass
class SpeechCoreConfig:
    """Autoregressive seq2seq speech core (reference mirrors the standard
    Tacotron 2 layer sizes; the toy factory divides widths by 8)."""

    n_symbols: int = 47
    symbol_embedding_dim: int = 512
    encoder_n_convs: int = 3
    encoder_kernel: int = 5
    encoder_dim: int = 512
    prenet_dims: tuple[int, int] = (256, 256)
    prenet_dropout: float = 0.5
    prenet_dropout_at_inference: bool = True
    attention_rnn_dim: int = 1024
    attention_dim: int = 128
    location_filters: int = 32
    location_kernel: int = 31
    decoder_rnn_dim: int = 1024
    p_attention_dropout: float = 0.1
    p_decoder_dropout: float = 0.1
    n_mels: int = 80
    n_frames_per_step: int = 1
    postnet_n_convs: int = 5
    postnet_dim: int = 512
    postnet_kernel: int = 5
    max_decoder_steps: int = 1000
    stop_threshold: float = 0.5

    def validate(self) -> None:
        dims = [self.symbol_embedding_dim, self.encoder_dim, self.attention_rnn_dim,
                self.attention_dim, self.decoder_rnn_dim, self.n_mels,
                self.n_frames_per_step] + list(self.prenet_dims)
        if any(d < 1 for d in dims):
            raise ConfigError("all dims must be >= 1")
        if not 0.0 <= self.prenet_dropout <= 1.0:
            raise ConfigError("dropout must be in [0, 1]")


def toy_speech_config(n_symbols: int = 47, n_mels: int = 80) -> SpeechCoreConfig:
    return SpeechCoreConfig(
        n_symbols=n_symbols,
        symbol_embedding_dim=64,
        encoder_dim=64,
        prenet_dims=(32, 32),
        attention_rnn_dim=128,
        attention_dim=16,
        location_filters=4,
        location_kernel=15,
        decoder_rnn_dim=128,
        n_mels=n_mels,
        postnet_dim=64,
        postnet_n_convs=3,
        max_decoder_steps=200,
    )


@dataclass
class GestureDecoderConfig:
    n_recurrent_layers: int = 4
    width: int = 512
    input_source: str = "attention_states"   # or "mel_frames"
    frame_ratio: int = 4
    init_pose: str = "mean"                  # or "zeros"
    pose_dim: int = 30
    input_dim: int = 1024                    # attention-rnn width or n_mels

    def validate(self) -> None:
        if self.frame_ratio < 1 or int(self.frame_ratio) != self.frame_ratio:
            raise ConfigError("frame_ratio must be an integer >= 1")
        if self.width < 1 or self.n_recurrent_layers < 1:
            raise ConfigError("widths must be >= 1")
        if self.input_source not in ("attention_states", "mel_frames"):
            raise ConfigError(f"unknown input_source {self.input_source!r}")


def toy_gesture_config(pose_dim: int = 30, input_dim: int = 128) -> GestureDecoderConfig:
    return GestureDecoderConfig(n_recurrent_layers=2, width=64,
                                pose_dim=pose_dim, input_dim=input_dim)


@dataclass
class SamplingSchedule:
    """Teacher-forcing probability schedule for the gesture sub-network."""

    p_start: float = 1.0
    hold_epochs: int = 5
    decay_epochs: int = 40
    p_end: float = 0.2

    def validate(self) -> None:
        if not 0.0 <= self.p_end <= self.p_start <= 1.0:
            raise ConfigError("need 0 <= p_end <= p_start <= 1")


@dataclass
class DiscriminatorConfig:
    n_recurrent_layers: int = 2
    width: int = 1024
    gan_weight: float = 0.05
    input_dim: int = 110        # n_mels + pose_dim
    saturating: bool = False    # minimax generator loss instead of -ln D(fake)
    update_ratio: int = 1       # discriminator updates per generator update

    def validate(self) -> None:
        if self.gan_weight < 0:
            raise ConfigError("gan_weight must be >= 0")


@dataclass
class FlowConfig:
    """Joint mel+motion normalizing flow (encoder/decoder/duration)."""

    n_mels: int = 80
    motion_dim: int = 30
    squeeze: int = 2
    group_size: int = 10          # invertible channel-mixing block size
    n_flow_steps: int = 12
    coupling_hidden: int = 192
    coupling_kernel: int = 5
    scale_cap: float = 2.0        # |log s| bound inside couplings
    encoder_dim: int = 192
    encoder_layers: int = 2
    encoder_heads: int = 2
    duration_hidden: int = 128
    add_blank: bool = True
    n_symbols: int = 47
    pad_channels: int = field(init=False, default=0)

    def __post_init__(self):
        total = (self.n_mels + self.motion_dim) * self.squeeze
        self.pad_channels = (-total % self.group_size) // self.squeeze
        if (total + self.pad_channels * self.squeeze) % self.group_size:
            raise ConfigError(
                "group_size incompatible with channel count even after padding")

    @property
    def joint_channels(self) -> int:
        return self.n_mels + self.motion_dim + self.pad_channels

    def validate(self) -> None:
        if self.squeeze < 1 or self.group_size < 1 or self.n_flow_steps < 1:
            raise ConfigError("flow sizes must be >= 1")


def toy_flow_config(n_mels: int = 80, motion_dim: int = 30,
                    n_symbols: int = 47) -> FlowConfig:
    return FlowConfig(n_mels=n_mels, motion_dim=motion_dim, group_size=4,
                      n_flow_steps=4, coupling_hidden=64, encoder_dim=32,
                      encoder_layers=1, duration_hidden=32, n_symbols=n_symbols)


@dataclass
class AudioGestureConfig:
    """Audio-conditioned autoregressive flow for the pipeline baseline."""

    pose_dim: int = 30
    n_flow_steps: int = 16
    width: int = 512              # conditioning-recurrence width
    coupling_hidden: int = 256
    context_past: int = 10
    context_future: int = 10
    pose_history: int = 3
    audio_proj_dim: int = 32
    silence_pad_s: float = 1.0
    gesture_fps: float = 20.0
    scale_cap: float = 2.0

    def validate(self) -> None:
        if self.n_flow_steps < 1:
            raise ConfigError("n_flow_steps must be >= 1")


def toy_audio_gesture_config(pose_dim: int = 30) -> AudioGestureConfig:
    return AudioGestureConfig(pose_dim=pose_dim, n_flow_steps=4, width=64,
                              coupling_hidden=48, audio_proj_dim=12,
                              context_past=5, context_future=5)


def asdict_config(cfg) -> dict:
    """Dataclass (possibly nested) to a JSON-serializable dict."""
    if dataclasses.is_dataclass(cfg) and not isinstance(cfg, type):
        return {k: asdict_config(v) for k, v in dataclasses.asdict(cfg).items()}
    if isinstance(cfg, dict):
        return {k: asdict_config(v) for k, v in cfg.items()}
    if isinstance(cfg, (list, tuple)):
        return [asdict_config(v) for v in cfg]
    if isinstance(cfg, Path):
        return str(cfg)
    return cfg


def write_config_snapshot(out_dir: str | Path, name: str, payload: dict) -> Path:
    """Persist the fully resolved configuration of a run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w", encoding="utf-8") as f:
        json.dump(asdict_config(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def apply_overrides(cfg, overrides: dict):
    """Return a dataclass copy with ``overrides`` applied to its fields."""
    if not overrides:
        return cfg
    valid = {f.name for f in dataclasses.fields(cfg)}
    unknown = set(overrides) - valid
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    coerced = {}
    for k, v in overrides.items():
        current = getattr(cfg, k)
        if isinstance(current, tuple) and isinstance(v, list):
            v = tuple(v)
        coerced[k] = v
    return dataclasses.replace(cfg, **coerced)
