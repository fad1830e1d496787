"""Training-side feature preparation for each model family.

All models train in normalized feature spaces; the statistics are
computed on the train split and carried in checkpoints so synthesis can
invert them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from isg.config import AudioConfig, DataConfig, flow_audio_config
from isg.corpus import CorpusManifest, PairedUtterance, load_paired_corpus, resample_waveform
from isg.features.mel import mel_spectrogram
from isg.features.motion import interpolate_to_times
from isg.tokens import Tokenizer


@dataclass
class NormStats:
    mel_mean: float = 0.0
    mel_std: float = 1.0
    pose_mean: np.ndarray = field(default_factory=lambda: np.zeros(1))
    pose_std: np.ndarray = field(default_factory=lambda: np.ones(1))
    joint_names: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"mel_mean": float(self.mel_mean), "mel_std": float(self.mel_std),
                "pose_mean": self.pose_mean.tolist(),
                "pose_std": self.pose_std.tolist(),
                "joint_names": list(self.joint_names)}

    @staticmethod
    def from_json(d: dict) -> "NormStats":
        return NormStats(mel_mean=d["mel_mean"], mel_std=d["mel_std"],
                         pose_mean=np.asarray(d["pose_mean"], dtype=np.float64),
                         pose_std=np.asarray(d["pose_std"], dtype=np.float64),
                         joint_names=tuple(d.get("joint_names", ())))


def compute_stats(utterances: list[PairedUtterance]) -> NormStats:
    train = [u for u in utterances if u.split == "train"] or utterances
    mel_cells = np.concatenate([u.mel.values.ravel() for u in train])
    poses = np.concatenate([u.motion.values for u in train], axis=0)
    pose_std = poses.std(axis=0)
    pose_std[pose_std < 1e-4] = 1.0       # constant channels pass through
    return NormStats(
        mel_mean=float(mel_cells.mean()),
        mel_std=float(max(mel_cells.std(), 1e-6)),
        pose_mean=poses.mean(axis=0),
        pose_std=pose_std,
        joint_names=tuple(train[0].motion.joint_names))


@dataclass
class Example:
    utt_id: str
    split: str
    ids: np.ndarray              # (L,) token ids
    mel: np.ndarray              # (T, n_mels) normalized
    poses: np.ndarray            # (K, D) normalized gesture targets


@dataclass
class PreparedData:
    examples: list[Example]
    stats: NormStats
    tokenizer: Tokenizer
    frame_ratio: int = 4
    mel_fps: float = 22050 / 256

    def split(self, name: str) -> list[Example]:
        return [e for e in self.examples if e.split == name]


def prepare_tacotron_data(manifest: CorpusManifest, data_cfg: DataConfig,
                          frame_ratio: int = 4) -> PreparedData:
    """Normalized mel + gesture targets on the attention-subsample grid.

    Gesture targets sit exactly at the timestamps of every ratio-th mel
    frame, so a sample with T valid mel frames has ceil(T / ratio)
    gesture frames.
    """
    utts = load_paired_corpus(manifest, data_cfg)
    if not utts:
        raise ValueError("manifest produced no loadable utterances")
    stats = compute_stats(utts)
    tokenizer = Tokenizer(mode=data_cfg.tokenizer_mode)
    mel_fps = data_cfg.audio.fps
    examples = []
    for u in utts:
        ids = encode_tokens_for_utterance(tokenizer, u.text)
        mel = (u.mel.values - stats.mel_mean) / stats.mel_std
        T = mel.shape[0]
        K = int(np.ceil(T / frame_ratio))
        times = np.arange(K) * frame_ratio / mel_fps
        poses = interpolate_to_times(u.motion.values, u.motion.fps, times)
        poses = (poses - stats.pose_mean) / stats.pose_std
        examples.append(Example(u.utt_id, u.split, ids,
                                mel.astype(np.float32),
                                poses.astype(np.float32)))
    return PreparedData(examples, stats, tokenizer, frame_ratio, mel_fps)


def encode_tokens_for_utterance(tokenizer: Tokenizer, text) -> np.ndarray:
    """Word-level utterance text to symbol ids in the tokenizer's mode."""
    if isinstance(text, (tuple, list)):
        text = " ".join(text)
    return np.asarray(tokenizer.encode(tokenizer.tokenize(text)), dtype=np.int64)


@dataclass
class Batch:
    ids: torch.Tensor            # (B, L) padded
    id_lengths: torch.Tensor     # (B,)
    mels: torch.Tensor           # (B, T, M) padded
    mel_lengths: torch.Tensor    # (B,)
    stops: torch.Tensor          # (B, T) stop targets
    poses: torch.Tensor          # (B, K, D) padded
    pose_lengths: torch.Tensor   # (B,)

    @property
    def frame_mask(self) -> torch.Tensor:
        T = self.mels.shape[1]
        return (torch.arange(T)[None, :] < self.mel_lengths[:, None])

    @property
    def pose_mask(self) -> torch.Tensor:
        K = self.poses.shape[1]
        return (torch.arange(K)[None, :] < self.pose_lengths[:, None])


def collate(examples: list[Example], dtype=torch.float32) -> Batch:
    B = len(examples)
    L = max(len(e.ids) for e in examples)
    T = max(e.mel.shape[0] for e in examples)
    K = max(e.poses.shape[0] for e in examples)
    M = examples[0].mel.shape[1]
    D = examples[0].poses.shape[1]
    ids = torch.zeros(B, L, dtype=torch.long)
    id_lengths = torch.zeros(B, dtype=torch.long)
    mels = torch.zeros(B, T, M, dtype=dtype)
    mel_lengths = torch.zeros(B, dtype=torch.long)
    stops = torch.zeros(B, T, dtype=dtype)
    poses = torch.zeros(B, K, D, dtype=dtype)
    pose_lengths = torch.zeros(B, dtype=torch.long)
    for b, e in enumerate(examples):
        ids[b, :len(e.ids)] = torch.as_tensor(e.ids)
        id_lengths[b] = len(e.ids)
        t = e.mel.shape[0]
        mels[b, :t] = torch.as_tensor(e.mel, dtype=dtype)
        mel_lengths[b] = t
        stops[b, t - 1:] = 1.0
        k = e.poses.shape[0]
        poses[b, :k] = torch.as_tensor(e.poses, dtype=dtype)
        pose_lengths[b] = k
    return Batch(ids, id_lengths, mels, mel_lengths, stops, poses, pose_lengths)


@dataclass
class FlowExample:
    utt_id: str
    split: str
    ids: np.ndarray              # blank-interleaved token ids
    joint: np.ndarray            # (T, C) normalized, even frame count


@dataclass
class FlowPreparedData:
    examples: list[FlowExample]
    joint_mean: np.ndarray
    joint_std: np.ndarray
    stats: NormStats
    tokenizer: Tokenizer
    n_mels: int

    def split(self, name: str) -> list[FlowExample]:
        return [e for e in self.examples if e.split == name]


def prepare_flow_data(manifest: CorpusManifest, data_cfg: DataConfig,
                      squeeze: int = 2, pad_channels: int = 0,
                      pad_seed: int = 0) -> FlowPreparedData:
    """Joint 60 fps mel+motion frames, per-channel normalized.

    Audio is resampled to the flow front-end rate; mel and motion frame
    counts are trimmed to agree and to divide the squeeze factor.  Extra
    channels (when the mixing group size requires padding) are filled
    with unit Gaussian noise so no channel is degenerate.
    """
    audio_cfg = flow_audio_config()
    base_cfg = DataConfig(audio=audio_cfg, motion_fps=data_cfg.motion_fps,
                          max_duration_s=data_cfg.max_duration_s,
                          align_tolerance_s=data_cfg.align_tolerance_s,
                          tokenizer_mode=data_cfg.tokenizer_mode)
    utts = load_paired_corpus(manifest, base_cfg)
    if not utts:
        raise ValueError("manifest produced no loadable utterances")
    tokenizer = Tokenizer(mode=data_cfg.tokenizer_mode)
    target_fps = audio_cfg.fps     # exactly 60
    rng = np.random.default_rng(pad_seed)

    raw = []
    for u in utts:
        mel = u.mel.values.astype(np.float64)
        T_mel = mel.shape[0]
        times = np.arange(T_mel) / target_fps
        motion = interpolate_to_times(u.motion.values, u.motion.fps, times)
        T = (T_mel // squeeze) * squeeze
        raw.append((u, np.concatenate([mel[:T], motion[:T]], axis=1)))

    train_joint = np.concatenate(
        [j for u, j in raw if u.split == "train"] or [j for _, j in raw], axis=0)
    mean = train_joint.mean(axis=0)
    std = train_joint.std(axis=0)
    std[std < 1e-4] = 1.0
    stats = compute_stats(utts)

    examples = []
    for u, joint in raw:
        normed = (joint - mean) / std
        if pad_channels:
            noise = rng.standard_normal((normed.shape[0], pad_channels))
            normed = np.concatenate([normed, noise], axis=1)
        from isg.models.glow_isg import encode_for_flow
        tokens = tokenizer.tokenize(" ".join(u.text))
        ids = np.asarray(encode_for_flow(tokens, tokenizer, add_blank=True),
                         dtype=np.int64)
        examples.append(FlowExample(u.utt_id, u.split, ids,
                                    normed.astype(np.float32)))
    return FlowPreparedData(examples, mean, std, stats, tokenizer,
                            n_mels=audio_cfg.n_mels)


@dataclass
class PipelineGestureExample:
    utt_id: str
    split: str
    audio: np.ndarray            # (T, n_mels) normalized mel at gesture fps
    poses: np.ndarray            # (T, D) normalized


@dataclass
class PipelineGestureData:
    examples: list[PipelineGestureExample]
    stats: NormStats
    gesture_fps: float

    def split(self, name: str) -> list[PipelineGestureExample]:
        return [e for e in self.examples if e.split == name]


def prepare_pipeline_gesture_data(manifest: CorpusManifest,
                                  data_cfg: DataConfig,
                                  gesture_fps: float = 20.0
                                  ) -> PipelineGestureData:
    """Audio features and poses on a shared gesture-rate grid."""
    utts = load_paired_corpus(manifest, data_cfg)
    if not utts:
        raise ValueError("manifest produced no loadable utterances")
    stats = compute_stats(utts)
    examples = []
    for u in utts:
        n = max(2, int(round(u.mel.n_frames / u.mel.fps * gesture_fps)))
        times = np.arange(n) / gesture_fps
        audio = interpolate_to_times(u.mel.values.astype(np.float64),
                                     u.mel.fps, times)
        poses = interpolate_to_times(u.motion.values, u.motion.fps, times)
        audio = (audio - stats.mel_mean) / stats.mel_std
        poses = (poses - stats.pose_mean) / stats.pose_std
        examples.append(PipelineGestureExample(
            u.utt_id, u.split, audio.astype(np.float32),
            poses.astype(np.float32)))
    return PipelineGestureData(examples, stats, gesture_fps)
