"""Paired text/audio/motion corpus handling.

Covers the JSONL manifest format, breathgroup-bigram data augmentation,
feature-extracting corpus loading, and a synthetic paired-corpus
generator whose speech and gesture are correlated by construction (so
the cross-modal coupling that the models should learn exists in the
data).

Manifest schema (UTF-8 JSON lines, one entry per line):
    {"id", "text", "audio", "motion", "breaths": [seconds...], "split"}
Prepared (augmented) manifests additionally carry "audio_span" and
"motion_span" in seconds relative to the source files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from isg.config import DataConfig, SyntheticConfig
from isg.features.mel import MelSpectrogram, mel_spectrogram
from isg.features.motion import (
    MotionSequence,
    audio_energy_envelope,
    load_motion_csv,
    save_motion_csv,
)
from isg.features.skeleton import parse_bvh, toy_skeleton
from isg.tokens import BREATH_TOKEN

log = logging.getLogger(__name__)

# channel of the synthetic corpus coupled to the audio energy envelope
COUPLED_JOINT = "RightForeArm"
COUPLED_AXIS = 0


@dataclass(frozen=True)
class BreathGroup:
    """A breath-delimited stretch of speech with aligned motion."""

    text: tuple[str, ...]
    audio_span: tuple[float, float]
    motion_span: tuple[float, float]

    def __post_init__(self):
        if self.audio_span[1] <= self.audio_span[0]:
            raise ValueError(f"empty audio span {self.audio_span}")
        if self.motion_span[1] <= self.motion_span[0]:
            raise ValueError(f"empty motion span {self.motion_span}")

    @property
    def duration_s(self) -> float:
        return self.audio_span[1] - self.audio_span[0]


@dataclass
class PairedUtterance:
    """Aligned (text, mel, motion) training/eval unit."""

    utt_id: str
    text: tuple[str, ...]
    duration_s: float
    mel: MelSpectrogram | None = None
    motion: MotionSequence | None = None
    audio_span: tuple[float, float] | None = None
    motion_span: tuple[float, float] | None = None
    split: str = "train"

    def validate(self, max_duration_s: float = 11.0) -> None:
        if self.duration_s > max_duration_s + 1e-9:
            raise ValueError(
                f"{self.utt_id}: duration {self.duration_s:.2f}s exceeds "
                f"{max_duration_s}s")
        if self.mel is not None:
            self.mel.validate()
            expected = self.duration_s * self.mel.fps
            if abs(self.mel.n_frames - expected) > 1 + self.mel.fps * 0.05:
                raise ValueError(
                    f"{self.utt_id}: mel frames {self.mel.n_frames} vs "
                    f"expected ~{expected:.1f}")
        if self.motion is not None:
            self.motion.validate()


@dataclass
class ManifestEntry:
    entry_id: str
    text: str
    audio: str
    motion: str
    breaths: list[float] = field(default_factory=list)
    split: str = "train"
    audio_span: tuple[float, float] | None = None
    motion_span: tuple[float, float] | None = None

    def to_json(self) -> dict:
        out = {"id": self.entry_id, "text": self.text, "audio": self.audio,
               "motion": self.motion, "breaths": list(self.breaths),
               "split": self.split}
        if self.audio_span is not None:
            out["audio_span"] = list(self.audio_span)
        if self.motion_span is not None:
            out["motion_span"] = list(self.motion_span)
        return out

    @staticmethod
    def from_json(d: dict) -> "ManifestEntry":
        return ManifestEntry(
            entry_id=str(d["id"]), text=d["text"], audio=d["audio"],
            motion=d["motion"], breaths=list(d.get("breaths", [])),
            split=d.get("split", "train"),
            audio_span=tuple(d["audio_span"]) if "audio_span" in d else None,
            motion_span=tuple(d["motion_span"]) if "motion_span" in d else None,
        )


class ManifestError(ValueError):
    """Raised for structurally invalid manifests."""


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def validate(self, check_files: bool = True) -> None:
        seen: dict[str, str] = {}
        for e in self.entries:
            if e.entry_id in seen:
                raise ManifestError(f"duplicate entry id {e.entry_id!r}")
            seen[e.entry_id] = e.split
            if e.split not in ("train", "val", "test"):
                raise ManifestError(f"{e.entry_id}: unknown split {e.split!r}")
            if check_files:
                for kind in ("audio", "motion"):
                    path = self.resolve(getattr(e, kind))
                    if not path.exists():
                        raise ManifestError(f"{e.entry_id}: missing {kind} file {path}")

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for e in self.entries:
                f.write(json.dumps(e.to_json()) + "\n")

    @staticmethod
    def load(path: str | Path) -> "CorpusManifest":
        path = Path(path)
        entries = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    entries.append(ManifestEntry.from_json(json.loads(line)))
        return CorpusManifest(entries=entries, root=path.parent)


def breath_groups_from_entry(entry: ManifestEntry, audio_duration_s: float,
                             motion_duration_s: float,
                             align_tolerance_s: float = 0.1
                             ) -> list[BreathGroup]:
    """Split one recording into breath groups at annotated breath times.

    The entry text carries one breath token per annotated breath; group
    boundaries sit at the breath timestamps.  Audio and motion must cover
    the same span to within the alignment tolerance, otherwise the spans
    of the final group would diverge.
    """
    if abs(audio_duration_s - motion_duration_s) > align_tolerance_s:
        raise ManifestError(
            f"{entry.entry_id}: audio {audio_duration_s:.2f}s vs motion "
            f"{motion_duration_s:.2f}s exceeds alignment tolerance "
            f"{align_tolerance_s}s")
    segments = [s.strip() for s in entry.text.split(BREATH_TOKEN)]
    breaths = sorted(entry.breaths)
    if len(segments) != len(breaths) + 1:
        raise ManifestError(
            f"{entry.entry_id}: {len(segments)} text segments but "
            f"{len(breaths)} breath annotations")
    bounds = [0.0] + breaths + [audio_duration_s]
    groups = []
    for i, seg in enumerate(segments):
        a0, a1 = bounds[i], bounds[i + 1]
        m1 = min(a1, motion_duration_s) if i == len(segments) - 1 else a1
        groups.append(BreathGroup(text=tuple(seg.split()),
                                  audio_span=(a0, a1),
                                  motion_span=(a0, m1)))
    return groups


def build_breathgroup_bigrams(groups: list[BreathGroup],
                              max_dur: float) -> list[PairedUtterance]:
    """Augment breath groups into utterances no longer than ``max_dur``.

    Emits every single group that fits, plus every pair of consecutive
    groups whose span (start of the first to end of the second, breath
    gap included) fits; each interior group therefore appears in the
    bigrams (i-1, i) and (i, i+1).  Bigram text is the two groups' text
    joined by the breath token.  Overlong single groups are dropped with
    a logged warning.
    """
    if max_dur <= 0:
        raise ValueError("max_dur must be positive")
    starts = [g.audio_span[0] for g in groups]
    if starts != sorted(starts):
        raise ValueError("groups must be ordered by start time")
    out: list[PairedUtterance] = []
    for i, g in enumerate(groups):
        if g.duration_s <= max_dur:
            out.append(PairedUtterance(
                utt_id=f"g{i}", text=g.text, duration_s=g.duration_s,
                audio_span=g.audio_span, motion_span=g.motion_span))
        else:
            log.warning("dropping breath group %d: %.2fs exceeds max %.2fs",
                        i, g.duration_s, max_dur)
        if i + 1 < len(groups):
            nxt = groups[i + 1]
            dur = nxt.audio_span[1] - g.audio_span[0]
            if dur <= max_dur:
                out.append(PairedUtterance(
                    utt_id=f"g{i}-{i + 1}",
                    text=g.text + (BREATH_TOKEN,) + nxt.text,
                    duration_s=dur,
                    audio_span=(g.audio_span[0], nxt.audio_span[1]),
                    motion_span=(g.motion_span[0], nxt.motion_span[1])))
    return out


@dataclass
class EntryError:
    entry_id: str
    message: str


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """16-bit PCM mono WAV to float64 in [-1, 1]."""
    sr, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio")
    if data.dtype == np.int16:
        y = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        y = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return y, int(sr)


def write_wav(path: str | Path, waveform: np.ndarray, sample_rate: int) -> None:
    y = np.clip(np.asarray(waveform, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, sample_rate, (y * 32767.0).astype(np.int16))


def _load_motion_file(path: Path, fps: float) -> MotionSequence:
    if path.suffix.lower() == ".bvh":
        _, motion = parse_bvh(path)
        return motion
    return load_motion_csv(path, fps)


def load_paired_corpus(manifest: CorpusManifest, config: DataConfig,
                       errors: list[EntryError] | None = None
                       ) -> list[PairedUtterance]:
    """Load, slice, feature-extract, and length-filter every entry.

    Entries whose audio and motion durations disagree beyond the
    configured tolerance produce a per-entry error (collected into
    ``errors`` if given, always logged) and are skipped; the remaining
    entries still load.  Ordering follows the manifest.
    """
    manifest.validate(check_files=True)
    out: list[PairedUtterance] = []
    for entry in manifest.entries:
        try:
            utt = _load_entry(manifest, entry, config)
        except (ValueError, OSError) as exc:
            log.error("entry %s failed to load: %s", entry.entry_id, exc)
            if errors is not None:
                errors.append(EntryError(entry.entry_id, str(exc)))
            continue
        if utt.duration_s > config.max_duration_s + 1e-9:
            log.warning("entry %s dropped: %.2fs over the %.2fs limit",
                        entry.entry_id, utt.duration_s, config.max_duration_s)
            continue
        out.append(utt)
    return out


def _load_entry(manifest: CorpusManifest, entry: ManifestEntry,
                config: DataConfig) -> PairedUtterance:
    wave, sr = read_wav(manifest.resolve(entry.audio))
    if sr != config.audio.sample_rate:
        wave = resample_waveform(wave, sr, config.audio.sample_rate)
        sr = config.audio.sample_rate
    motion = _load_motion_file(manifest.resolve(entry.motion), config.motion_fps)

    audio_dur = len(wave) / sr
    motion_dur = motion.duration_s
    if entry.audio_span is None:
        if abs(audio_dur - motion_dur) > config.align_tolerance_s:
            raise ValueError(
                f"audio {audio_dur:.2f}s vs motion {motion_dur:.2f}s exceeds "
                f"alignment tolerance {config.align_tolerance_s}s")
        a0, a1 = 0.0, audio_dur
        m0, m1 = 0.0, motion_dur
    else:
        a0, a1 = entry.audio_span
        m0, m1 = entry.motion_span if entry.motion_span else entry.audio_span
        if abs((a1 - a0) - (m1 - m0)) > config.align_tolerance_s:
            raise ValueError(
                f"span mismatch: audio {a1 - a0:.2f}s vs motion {m1 - m0:.2f}s")
        if a1 > audio_dur + config.align_tolerance_s or m1 > motion_dur + 1.0 / motion.fps + config.align_tolerance_s:
            raise ValueError("span extends past the source file")

    wave_slice = wave[int(round(a0 * sr)):int(round(a1 * sr))]
    f0, f1 = int(round(m0 * motion.fps)), int(round(m1 * motion.fps))
    motion_slice = MotionSequence(motion.values[f0:min(f1, motion.n_frames)],
                                  motion.fps, motion.joint_names)
    mel = mel_spectrogram(wave_slice, config.audio)
    return PairedUtterance(
        utt_id=entry.entry_id, text=tuple(entry.text.split()),
        duration_s=len(wave_slice) / sr, mel=mel, motion=motion_slice,
        audio_span=(a0, a1), motion_span=(m0, m1), split=entry.split)


def resample_waveform(y: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    from scipy.signal import resample_poly
    from math import gcd
    g = gcd(sr_in, sr_out)
    return resample_poly(y, sr_out // g, sr_in // g)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

_WORDS = ("bah", "dee", "goh", "kay", "loo", "mim", "noh", "pah",
          "ree", "soo", "tay", "voo")


def _word_tone(word: str, duration_s: float, sr: int, rng) -> np.ndarray:
    idx = _WORDS.index(word)
    f0 = 130.0 * (1.22 ** idx)            # distinct fundamental per word
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    arch = np.clip(np.sin(np.pi * np.arange(n) / max(n - 1, 1)), 0.0, None)
    envelope = arch ** 0.7
    tone = (0.8 * np.sin(2 * np.pi * f0 * t)
            + 0.25 * np.sin(2 * np.pi * 2 * f0 * t + 0.3))
    return envelope * tone


def coupled_channel_index(joint_names: tuple[str, ...]) -> int:
    return 3 * joint_names.index(COUPLED_JOINT) + COUPLED_AXIS


def generate_synthetic_corpus(seed: int, n_utterances: int,
                              config: SyntheticConfig,
                              out_dir: str | Path) -> CorpusManifest:
    """Write a deterministic synthetic paired corpus under ``out_dir``.

    Each utterance pairs a pseudo-word token sequence with a tone/noise
    waveform and a motion track whose designated channel follows the
    audio energy envelope, so the speech-to-gesture correlation is
    learnable by construction.  Byte-identical for the same seed.
    """
    if n_utterances < 1:
        raise ValueError("n_utterances must be >= 1")
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "motion").mkdir(parents=True, exist_ok=True)
    skeleton = toy_skeleton()
    names = skeleton.joint_names
    D = 3 * skeleton.n_joints
    coupled = coupled_channel_index(names)
    sr = config.sample_rate
    fps = config.motion_fps

    entries = []
    for i in range(n_utterances):
        n_groups = int(rng.integers(config.groups_per_utterance[0],
                                    config.groups_per_utterance[1] + 1))
        pieces: list[np.ndarray] = []
        text_groups: list[str] = []
        breaths: list[float] = []
        cursor = 0.0
        for g in range(n_groups):
            if g > 0:
                gap = rng.uniform(*config.breath_gap_s)
                pieces.append(np.zeros(int(round(gap * sr))))
                breaths.append(cursor + gap / 2.0)
                cursor += gap
            n_words = int(rng.integers(config.words_per_group[0],
                                       config.words_per_group[1] + 1))
            words = [str(rng.choice(_WORDS)) for _ in range(n_words)]
            text_groups.append(" ".join(words))
            for w, word in enumerate(words):
                if w > 0:
                    gap = rng.uniform(*config.word_gap_s)
                    pieces.append(np.zeros(int(round(gap * sr))))
                    cursor += gap
                dur = rng.uniform(*config.word_duration_s)
                pieces.append(_word_tone(word, dur, sr, rng))
                cursor += int(round(dur * sr)) / sr
        wave = np.concatenate(pieces) * 0.7
        wave += rng.normal(0.0, 1e-4, len(wave))     # dither below tone level
        duration = len(wave) / sr

        n_frames = int(round(duration * fps))
        env = audio_energy_envelope(wave, sr, fps, n_frames)
        env = env / max(env.max(), 1e-9)
        t = np.arange(n_frames) / fps
        motion = np.zeros((n_frames, D))
        motion += rng.normal(0.0, 0.03, motion.shape)
        # one channel tracks the audio envelope tightly (the learnable
        # cross-modal coupling); the rest carry speaker-like variability:
        # random per-utterance phases/rates and smooth band-limited noise,
        # so gesture is only partly predictable from the audio
        motion[:, coupled] += 0.25 + 0.9 * env
        f_arm = rng.uniform(0.5, 1.2)
        motion[:, 3 * names.index("RightArm")] += 0.35 * env * np.sin(
            2 * np.pi * f_arm * t + rng.uniform(0, 2 * np.pi))
        motion[:, 3 * names.index("LeftForeArm")] += 0.2 + 0.5 * env
        motion[:, 3 * names.index("LeftArm") + 2] += 0.3 * env * np.cos(
            2 * np.pi * rng.uniform(0.4, 1.0) * t + rng.uniform(0, 2 * np.pi))
        motion[:, 3 * names.index("Head") + 0] += 0.12 * env
        motion[:, 3 * names.index("Spine") + 2] += 0.08 * np.sin(
            2 * np.pi * rng.uniform(0.15, 0.4) * t + rng.uniform(0, 2 * np.pi))
        drift = np.cumsum(rng.normal(0.0, 0.018, (n_frames, 4)), axis=0)
        drift -= drift.mean(axis=0, keepdims=True)
        for k, joint in enumerate(("RightArm", "LeftArm", "RightHand",
                                   "LeftHand")):
            motion[:, 3 * names.index(joint) + 1] += np.clip(drift[:, k],
                                                             -0.6, 0.6)

        uid = f"utt{i:04d}"
        wav_rel = f"wav/{uid}.wav"
        motion_rel = f"motion/{uid}.csv"
        write_wav(out / wav_rel, wave, sr)
        save_motion_csv(MotionSequence(motion, fps, names), out / motion_rel)
        if i < int(config.train_fraction * n_utterances):
            split = "train"
        elif i < int((config.train_fraction + config.val_fraction) * n_utterances):
            split = "val"
        else:
            split = "test"
        entries.append(ManifestEntry(
            entry_id=uid, text=f" {BREATH_TOKEN} ".join(text_groups),
            audio=wav_rel, motion=motion_rel, breaths=breaths, split=split))

    manifest = CorpusManifest(entries=entries, root=out)
    manifest.save(out / "manifest.jsonl")
    return manifest


def prepare_corpus(manifest: CorpusManifest, config: DataConfig,
                   out_path: str | Path) -> CorpusManifest:
    """Breathgroup-bigram augmentation over a raw manifest.

    Writes a prepared manifest whose entries reference spans of the
    source files; feature extraction happens at load time.
    """
    import os

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    prepared: list[ManifestEntry] = []
    for entry in manifest.entries:
        wave, sr = read_wav(manifest.resolve(entry.audio))
        motion = _load_motion_file(manifest.resolve(entry.motion),
                                   config.motion_fps)
        groups = breath_groups_from_entry(entry, len(wave) / sr,
                                          motion.duration_s,
                                          config.align_tolerance_s)
        audio_rel = os.path.relpath(manifest.resolve(entry.audio), out_path.parent)
        motion_rel = os.path.relpath(manifest.resolve(entry.motion), out_path.parent)
        for utt in build_breathgroup_bigrams(groups, config.max_duration_s):
            prepared.append(ManifestEntry(
                entry_id=f"{entry.entry_id}_{utt.utt_id}",
                text=" ".join(utt.text),
                audio=audio_rel, motion=motion_rel,
                breaths=[], split=entry.split,
                audio_span=utt.audio_span, motion_span=utt.motion_span))
    out = CorpusManifest(entries=prepared, root=out_path.parent)
    out.save(out_path)
    return out
