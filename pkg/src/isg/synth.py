"""Checkpoint-driven synthesis and output writing.

Every synthesis produces a WAV (reference vocoder), motion as CSV and
BVH, the mel as float32 binary with a JSON sidecar, and a manifest JSON
linking them with timing metadata.  Models operate in the normalized
feature spaces recorded in their checkpoints; outputs here are
de-normalized.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from isg.config import AudioConfig, FlowConfig, GestureDecoderConfig, SpeechCoreConfig
from isg.corpus import write_wav
from isg.features.mel import MelSpectrogram, griffin_lim, save_mel
from isg.features.motion import MotionSequence, gaussian_smooth, resample_motion, save_motion_csv
from isg.features.skeleton import Skeleton, toy_skeleton, write_bvh
from isg.models.glow_isg import GlowISG
from isg.models.pipeline import AudioGestureFlow, PipelineSynthesizer, StageTimings
from isg.models.speech_core import SpeechCore, synthesize_speech
from isg.models.tacotron_isg import TacotronISG
from isg.tokens import Tokenizer
from isg.training.checkpoint import load_checkpoint, load_into_model
from isg.training.data import NormStats

MODEL_NAMES = ("tacotron2-isg-ct", "tacotron2-isg-st", "glowtts-isg",
               "pipeline", "speech-only")


@dataclass
class SynthesisResult:
    text: str
    mel: MelSpectrogram | None
    motion: MotionSequence | None
    waveform: np.ndarray | None
    duration_s: float
    timings: StageTimings | None = None
    truncated: bool = False
    files: dict | None = None


def _cfg_from(meta_cfg: dict, cls):
    import dataclasses
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in meta_cfg.items():
        if k not in names or k == "pad_channels":
            continue
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)


def _skeleton_from_meta(meta: dict) -> Skeleton | None:
    sk = meta.get("skeleton")
    if not sk:
        return None
    if "parents" in sk and "offsets" in sk:
        return Skeleton(tuple(sk["joint_names"]), tuple(sk["parents"]),
                        np.asarray(sk["offsets"]))
    toy = toy_skeleton()
    if tuple(sk["joint_names"]) == toy.joint_names:
        return toy
    return None


class LoadedModel:
    """A checkpoint rehydrated into a model plus its feature context."""

    def __init__(self, path: str | Path):
        state, meta = load_checkpoint(path)
        self.meta = meta
        self.stats = NormStats.from_json(meta["stats"])
        self.tokenizer = Tokenizer(mode=meta.get("tokenizer_mode", "char"))
        self.skeleton = _skeleton_from_meta(meta)
        kind = meta.get("regime", "")
        configs = meta.get("configs", {})
        if "flow" in configs:
            cfg = _cfg_from(configs["flow"], FlowConfig)
            self.model: torch.nn.Module = GlowISG(cfg)
            self.kind = "flow"
        elif "audio_gesture" in configs:
            from isg.config import AudioGestureConfig
            cfg = _cfg_from(configs["audio_gesture"], AudioGestureConfig)
            n_mels = _cfg_from(configs.get("speech", {"n_mels": 80}),
                               SpeechCoreConfig).n_mels if "speech" in configs else 80
            self.model = AudioGestureFlow(cfg, n_mels=n_mels)
            self.kind = "pipeline_gesture"
        elif "gesture" in configs:
            speech_cfg = _cfg_from(configs["speech"], SpeechCoreConfig)
            gesture_cfg = _cfg_from(configs["gesture"], GestureDecoderConfig)
            self.model = TacotronISG(speech_cfg, gesture_cfg)
            self.kind = "isg"
        elif "speech" in configs:
            speech_cfg = _cfg_from(configs["speech"], SpeechCoreConfig)
            container = torch.nn.Module()
            container.speech_core = SpeechCore(speech_cfg)
            self.model = container
            self.kind = "speech"
        else:
            raise ValueError(f"checkpoint {path} carries no known model config")
        load_into_model(self.model, state)
        self.model.eval()
        self.regime = kind
        self.mel_fps = float(meta.get("mel_fps", 22050 / 256))
        self.sample_rate = int(meta.get("sample_rate", 22050))

    def denorm_mel(self, mel: MelSpectrogram) -> MelSpectrogram:
        values = mel.values * self.stats.mel_std + self.stats.mel_mean
        return MelSpectrogram(values=values.astype(np.float32), fps=mel.fps,
                              sample_rate=mel.sample_rate)

    def denorm_motion(self, motion: MotionSequence) -> MotionSequence:
        values = motion.values * self.stats.pose_std + self.stats.pose_mean
        return MotionSequence(values, motion.fps,
                              tuple(self.stats.joint_names))


def synthesize_utterance(model_name: str, checkpoint: str | Path,
                         text: str, seed: int = 0, temperature: float = 0.7,
                         length_scale: float = 0.9,
                         gesture_checkpoint: str | Path | None = None,
                         vocoder_iters: int = 30,
                         export_fps: float = 20.0) -> SynthesisResult:
    """Synthesize one utterance with any of the supported models."""
    if model_name not in MODEL_NAMES:
        raise ValueError(
            f"unknown model {model_name!r}; valid models: "
            f"{', '.join(MODEL_NAMES)}")
    torch.manual_seed(seed)
    loaded = LoadedModel(checkpoint)
    tokens = loaded.tokenizer.tokenize(text)

    if model_name == "glowtts-isg":
        if loaded.kind != "flow":
            raise ValueError("glowtts-isg needs a flow checkpoint")
        mel_n, motion_n = loaded.model.sample(
            tokens, loaded.tokenizer, temperature=temperature,
            length_scale=length_scale, seed=seed)
        # sample() already de-normalizes via its stored channel stats
        mel = mel_n
        motion = MotionSequence(motion_n.values, motion_n.fps,
                                tuple(loaded.stats.joint_names))
        timings = None
        truncated = False
    elif model_name == "pipeline":
        if gesture_checkpoint is None:
            raise ValueError("pipeline needs --gesture-checkpoint for its "
                             "second stage")
        gesture_loaded = LoadedModel(gesture_checkpoint)
        if gesture_loaded.kind != "pipeline_gesture":
            raise ValueError("pipeline gesture checkpoint has the wrong kind")
        if loaded.kind not in ("speech", "isg"):
            raise ValueError("pipeline speech checkpoint must hold a speech core")
        pipe = PipelineSynthesizer(loaded.model.speech_core,
                                   gesture_loaded.model)
        speech, motion_n, timings = pipe.synthesize(
            tokens, loaded.tokenizer, mel_fps=loaded.mel_fps,
            sample_rate=loaded.sample_rate, seed=seed)
        mel = loaded.denorm_mel(speech.mel_post)
        motion = gesture_loaded.denorm_motion(motion_n)
        truncated = speech.truncated
    elif model_name in ("tacotron2-isg-ct", "tacotron2-isg-st"):
        if loaded.kind != "isg":
            raise ValueError(f"{model_name} needs a joint checkpoint")
        t0 = time.perf_counter()
        ids = torch.tensor(loaded.tokenizer.encode(tokens), dtype=torch.long)
        out, motion_n = loaded.model.infer_motion(ids, loaded.mel_fps)
        mel = loaded.denorm_mel(MelSpectrogram(
            values=out["mel_post"][0].numpy(), fps=loaded.mel_fps,
            sample_rate=loaded.sample_rate))
        motion = loaded.denorm_motion(motion_n)
        # output smoothing is an export-time step, never used in training
        motion = gaussian_smooth(motion, window=3, sigma=1.0)
        timings = None
        truncated = bool(out["truncated"])
    else:  # speech-only
        if loaded.kind not in ("speech", "isg"):
            raise ValueError("speech-only needs a speech checkpoint")
        speech = synthesize_speech(loaded.model.speech_core, tokens,
                                   loaded.tokenizer, mode="free_running",
                                   mel_fps=loaded.mel_fps,
                                   sample_rate=loaded.sample_rate)
        mel = loaded.denorm_mel(speech.mel_post)
        motion = None
        timings = None
        truncated = speech.truncated

    if motion is not None and export_fps and motion.fps != export_fps:
        motion = resample_motion(motion, export_fps)

    audio_cfg_d = loaded.meta.get("audio")
    if audio_cfg_d:
        audio_cfg = _cfg_from(audio_cfg_d, AudioConfig)
    elif mel.sample_rate == 24000:
        from isg.config import flow_audio_config
        audio_cfg = flow_audio_config()
    else:
        audio_cfg = AudioConfig()
    waveform = griffin_lim(mel, n_iters=vocoder_iters, config=audio_cfg,
                           seed=seed)
    return SynthesisResult(
        text=text, mel=mel, motion=motion, waveform=waveform,
        duration_s=mel.n_frames / mel.fps,
        timings=timings, truncated=truncated)


def write_outputs(result: SynthesisResult, out_dir: str | Path, stem: str,
                  skeleton: Skeleton | None = None,
                  sample_rate: int | None = None) -> dict:
    """WAV + motion CSV/BVH + mel binary + linking manifest JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    if result.waveform is not None and result.mel is not None:
        wav_path = out / f"{stem}.wav"
        write_wav(wav_path, result.waveform,
                  sample_rate or result.mel.sample_rate)
        files["wav"] = wav_path.name
    if result.mel is not None:
        mel_path = out / f"{stem}.mel.f32"
        save_mel(result.mel, mel_path)
        files["mel"] = mel_path.name
    if result.motion is not None:
        csv_path = out / f"{stem}.motion.csv"
        save_motion_csv(result.motion, csv_path)
        files["motion_csv"] = csv_path.name
        if skeleton is None and result.motion.joint_names:
            toy = toy_skeleton()
            if tuple(result.motion.joint_names) == toy.joint_names:
                skeleton = toy
        if skeleton is not None:
            bvh_path = out / f"{stem}.bvh"
            write_bvh(bvh_path, skeleton, result.motion)
            files["bvh"] = bvh_path.name
    manifest = {
        "text": result.text,
        "duration_s": result.duration_s,
        "truncated": result.truncated,
        "files": files,
        "timings": result.timings.to_json() if result.timings else None,
    }
    with open(out / f"{stem}.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    result.files = files
    return manifest
