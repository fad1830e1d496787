"""Training orchestration for every regime.

Regimes:

* ``speech_only``     - the speech core alone, full teacher forcing.
* ``isg_ct``          - co-training: speech and gesture sub-networks
                        updated together (gesture gradients flow back
                        into the speech core through the tapped states).
* ``isg_st``          - the speech core is frozen (weights byte-identical
                        before/after); the gesture sub-network trains on
                        MSE plus a 0.05-weighted adversarial loss over
                        the generated (speech, gesture) pair.
* ``isg_scratch``     - co-training from random initialization.
* ``flow``            - joint mel+motion flow, exact NLL + durations.
* ``pipeline_gesture``- audio-conditioned gesture flow for the baseline.

Every stage is fully seeded: parameter init, batch order, dropout, the
scheduled-sampling coin flips, and flow sampling all derive from the
stage seed, so identical stages produce identical loss trajectories.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from isg.config import (
    AudioGestureConfig,
    DataConfig,
    DiscriminatorConfig,
    FlowConfig,
    GestureDecoderConfig,
    SamplingSchedule,
    SpeechCoreConfig,
    apply_overrides,
    asdict_config,
    toy_audio_gesture_config,
    toy_flow_config,
    toy_gesture_config,
    toy_speech_config,
)
from isg.corpus import CorpusManifest
from isg.features.skeleton import toy_skeleton
from isg.models.adversarial import SequenceDiscriminator, gan_losses
from isg.models.gesture import masked_gesture_loss, teacher_forcing_probability
from isg.models.glow_isg import GlowISG, mas_align, TokenPrior
from isg.models.pipeline import AudioGestureFlow
from isg.models.speech_core import SpeechCore, tts_loss
from isg.models.tacotron_isg import TacotronISG
from isg.training import data as data_mod
from isg.training.checkpoint import load_checkpoint, load_into_model, save_checkpoint
from isg.training.plan import StageSpec, TrainPlan, validate_plan


class PlanError(ValueError):
    pass


@dataclass
class StageResult:
    stage: StageSpec
    checkpoint_path: Path
    metrics_path: Path
    metrics: list[dict]
    model: nn.Module
    meta: dict = field(default_factory=dict)


class _SpeechContainer(nn.Module):
    """Keeps speech-only checkpoints name-compatible with joint models."""

    def __init__(self, cfg: SpeechCoreConfig):
        super().__init__()
        self.speech_core = SpeechCore(cfg)


def _speech_config(stage: StageSpec, n_symbols: int, n_mels: int
                   ) -> SpeechCoreConfig:
    if stage.model_size == "reference":
        cfg = SpeechCoreConfig(n_symbols=n_symbols, n_mels=n_mels)
    else:
        cfg = toy_speech_config(n_symbols=n_symbols, n_mels=n_mels)
    return apply_overrides(cfg, stage.overrides.get("speech", {}))


def _gesture_config(stage: StageSpec, pose_dim: int,
                    speech_cfg: SpeechCoreConfig) -> GestureDecoderConfig:
    input_dim = (speech_cfg.attention_rnn_dim
                 if stage.gesture_input == "attention_states"
                 else speech_cfg.n_mels)
    if stage.model_size == "reference":
        cfg = GestureDecoderConfig(pose_dim=pose_dim, input_dim=input_dim,
                                   input_source=stage.gesture_input)
    else:
        cfg = toy_gesture_config(pose_dim=pose_dim, input_dim=input_dim)
        cfg.input_source = stage.gesture_input
    return apply_overrides(cfg, stage.overrides.get("gesture", {}))


def _disc_config(stage: StageSpec, n_mels: int, pose_dim: int
                 ) -> DiscriminatorConfig:
    if stage.model_size == "reference":
        cfg = DiscriminatorConfig(input_dim=n_mels + pose_dim,
                                  gan_weight=stage.gan_weight)
    else:
        cfg = DiscriminatorConfig(n_recurrent_layers=2, width=128,
                                  input_dim=n_mels + pose_dim,
                                  gan_weight=stage.gan_weight)
    return apply_overrides(cfg, stage.overrides.get("discriminator", {}))


def _schedule(stage: StageSpec) -> SamplingSchedule:
    sched = SamplingSchedule()
    for k, v in stage.schedule.items():
        setattr(sched, k, v)
    sched.validate()
    return sched


def _batches(rng: np.random.Generator, examples, batch_size: int):
    """Infinite shuffled batch index generator; yields (epoch, batch)."""
    epoch = 0
    while True:
        order = rng.permutation(len(examples))
        for start in range(0, len(examples), batch_size):
            idx = order[start:start + batch_size]
            yield epoch, [examples[i] for i in idx]
        epoch += 1


def _set_prenet_dropout(model: SpeechCore, active: bool):
    model.prenet.always_dropout = active


class _eval_mode:
    """Temporarily switch to eval with prenet dropout off, restoring the
    exact per-module training flags afterwards (a frozen speech core must
    stay in eval mode so its batch-norm statistics never drift)."""

    def __init__(self, model: nn.Module, speech: SpeechCore):
        self.model = model
        self.speech = speech

    def __enter__(self):
        self.modes = {name: m.training for name, m in self.model.named_modules()}
        self.model.eval()
        _set_prenet_dropout(self.speech, False)
        return self

    def __exit__(self, *exc):
        _set_prenet_dropout(self.speech,
                            self.speech.cfg.prenet_dropout_at_inference)
        for name, m in self.model.named_modules():
            m.training = self.modes[name]


def eval_speech_mse(speech: SpeechCore, examples, batch_size: int = 16) -> float:
    """Deterministic teacher-forced mel MSE (post-net output)."""
    total, count = 0.0, 0
    with _eval_mode(speech, speech), torch.no_grad():
        for start in range(0, len(examples), batch_size):
            batch = data_mod.collate(examples[start:start + batch_size])
            out = speech(batch.ids, batch.id_lengths, batch.mels,
                         collect_attention=False)
            mask = batch.frame_mask.unsqueeze(-1).to(out["mel_post"].dtype)
            se = ((out["mel_post"] - batch.mels) ** 2 * mask).sum().item()
            total += se
            count += int(mask.sum().item()) * batch.mels.shape[-1]
    return total / max(count, 1)


def eval_gesture_mse(isg: TacotronISG, examples) -> float:
    total, count = 0.0, 0
    with _eval_mode(isg, isg.speech_core), torch.no_grad():
        for start in range(0, len(examples), 16):
            batch = data_mod.collate(examples[start:start + 16])
            out = isg(batch.ids, batch.id_lengths, batch.mels,
                      teacher_poses=batch.poses, p_teacher=1.0)
            mask = batch.pose_mask.unsqueeze(-1).to(out["gesture"].dtype)
            total += ((out["gesture"] - batch.poses) ** 2 * mask).sum().item()
            count += int(mask.sum().item()) * batch.poses.shape[-1]
    return total / max(count, 1)


def _upsample_batch_poses(poses: torch.Tensor, pose_lengths: torch.Tensor,
                          mel_lengths: torch.Tensor, T: int) -> torch.Tensor:
    """Per-sample linear upsampling of poses to the mel frame grid."""
    B, K, D = poses.shape
    out = poses.new_zeros(B, T, D)
    for b in range(B):
        k = int(pose_lengths[b])
        t = int(mel_lengths[b])
        seq = poses[b, :k].T.unsqueeze(0)           # (1, D, k)
        if k == 1:
            up = seq.expand(-1, -1, t)
        else:
            up = torch.nn.functional.interpolate(
                seq, size=t, mode="linear", align_corners=True)
        out[b, :t] = up[0].T
    return out


def run_stage(stage: StageSpec, work_dir: str | Path,
              previous_checkpoint: str | Path | None = None,
              data_cfg: DataConfig | None = None) -> StageResult:
    """Run one training stage and write its checkpoint + metrics log."""
    work = Path(work_dir)
    stage_dir = work / stage.name.replace("/", "-")
    stage_dir.mkdir(parents=True, exist_ok=True)
    data_cfg = data_cfg or DataConfig()

    # small-model training is dispatch-bound; thread fan-out only hurts
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)

    torch.manual_seed(stage.seed)
    rng = np.random.default_rng(stage.seed)
    sched_gen = torch.Generator()
    sched_gen.manual_seed(stage.seed + 1)

    manifest = CorpusManifest.load(stage.corpus)

    checkpoint_in = None
    if stage.checkpoint_in == "previous":
        if previous_checkpoint is None:
            raise PlanError(f"stage {stage.name}: no previous checkpoint")
        checkpoint_in = Path(previous_checkpoint)
    elif stage.checkpoint_in:
        checkpoint_in = Path(stage.checkpoint_in)
    if stage.regime in ("isg_ct", "isg_st") and checkpoint_in is None:
        raise PlanError(
            f"stage {stage.name}: regime {stage.regime} requires a speech "
            f"checkpoint")

    try:
        if stage.regime in ("speech_only", "isg_ct", "isg_st", "isg_scratch"):
            result = _run_tacotron_family(stage, stage_dir, manifest, data_cfg,
                                          checkpoint_in, rng, sched_gen)
        elif stage.regime == "flow":
            result = _run_flow(stage, stage_dir, manifest, data_cfg,
                               checkpoint_in, rng)
        elif stage.regime == "pipeline_gesture":
            result = _run_pipeline_gesture(stage, stage_dir, manifest, data_cfg,
                                           checkpoint_in, rng)
        else:
            raise PlanError(f"unknown regime {stage.regime!r}")
    finally:
        torch.set_num_threads(n_threads)
    return result


def _write_metrics(path: Path, metrics: list[dict]):
    with open(path, "w", encoding="utf-8") as f:
        for m in metrics:
            f.write(json.dumps(m) + "\n")


def _periodic_checkpoint(stage: StageSpec, stage_dir: Path, model: nn.Module,
                         meta: dict, iteration: int, keep_last: int = 3):
    """Cadenced snapshots, pruned to the most recent ``keep_last``."""
    if stage.checkpoint_interval <= 0 or iteration % stage.checkpoint_interval:
        return
    meta = dict(meta)
    meta["iteration"] = iteration
    save_checkpoint(stage_dir / f"checkpoint_it{iteration:07d}.npz", model,
                    meta)
    snapshots = sorted(stage_dir.glob("checkpoint_it*.npz"))
    for old in snapshots[:-keep_last]:
        old.unlink()


def _skeleton_meta(joint_names) -> dict | None:
    sk = toy_skeleton()
    if tuple(joint_names) == sk.joint_names:
        return {"joint_names": list(sk.joint_names),
                "parents": list(sk.parents),
                "offsets": sk.offsets.tolist()}
    if joint_names:
        return {"joint_names": list(joint_names)}
    return None


def _run_tacotron_family(stage, stage_dir, manifest, data_cfg, checkpoint_in,
                         rng, sched_gen) -> StageResult:
    data = data_mod.prepare_tacotron_data(manifest, data_cfg)
    n_mels = data.examples[0].mel.shape[1]
    pose_dim = data.examples[0].poses.shape[1]
    speech_cfg = _speech_config(stage, data.tokenizer.n_symbols, n_mels)

    speech_only = stage.regime == "speech_only"
    if speech_only:
        model: nn.Module = _SpeechContainer(speech_cfg)
        gesture_cfg = None
    else:
        gesture_cfg = _gesture_config(stage, pose_dim, speech_cfg)
        model = TacotronISG(speech_cfg, gesture_cfg)
        target_frames = np.concatenate(
            [e.poses for e in data.split("train") or data.examples], axis=0)
        model.set_mean_pose(target_frames.mean(axis=0))

    # the discriminator is constructed for every frozen-speech stage,
    # used or not, so RNG streams match between GAN and MSE-only variants
    discriminator = None
    d_opt = None
    if stage.regime == "isg_st":
        disc_cfg = _disc_config(stage, n_mels, pose_dim)
        discriminator = SequenceDiscriminator(disc_cfg)
        d_opt = torch.optim.Adam(discriminator.parameters(),
                                 lr=stage.learning_rate)

    if checkpoint_in is not None:
        state, _ = load_checkpoint(checkpoint_in)
        load_into_model(model, state)

    frozen_prefixes = stage.freeze_set if stage.regime == "isg_st" else ()
    trainable = []
    for name, p in model.named_parameters():
        if any(name.startswith(pref) for pref in frozen_prefixes):
            p.requires_grad_(False)
        else:
            trainable.append(p)
    if not trainable:
        raise PlanError(f"stage {stage.name}: freeze_set leaves nothing trainable")
    opt = torch.optim.Adam(trainable, lr=stage.learning_rate)

    model.train()
    if stage.regime == "isg_st":
        # frozen core runs in eval mode: batch-norm statistics must not
        # drift, while the prenet keeps its always-on dropout
        model.speech_core.eval()

    meta = {
        "regime": stage.regime,
        "model": stage.model,
        "iteration": stage.iterations,
        "seed": stage.seed,
        "configs": {"speech": asdict_config(speech_cfg)},
        "stats": data.stats.to_json(),
        "tokenizer_mode": data_cfg.tokenizer_mode,
        "frame_ratio": data.frame_ratio,
        "mel_fps": data.mel_fps,
        "sample_rate": data_cfg.audio.sample_rate,
        "audio": asdict_config(data_cfg.audio),
        "skeleton": _skeleton_meta(data.stats.joint_names),
    }
    if gesture_cfg is not None:
        meta["configs"]["gesture"] = asdict_config(gesture_cfg)

    schedule = _schedule(stage)
    train = data.split("train") or data.examples
    val = data.split("val") or train
    batches = _batches(rng, train, stage.batch_size)
    metrics: list[dict] = []
    t0 = time.perf_counter()

    for it in range(stage.iterations):
        epoch, group = next(batches)
        batch = data_mod.collate(group)
        record = {"iteration": it + 1, "epoch": epoch}

        if speech_only:
            out = model.speech_core(batch.ids, batch.id_lengths, batch.mels,
                                    collect_attention=False)
            loss = tts_loss(out["mel_pre"], out["mel_post"],
                            out["stop_logits"], batch.mels, batch.stops,
                            batch.frame_mask)
            record["tts_loss"] = float(loss.item())
        elif stage.regime in ("isg_ct", "isg_scratch"):
            p = teacher_forcing_probability(epoch, schedule)
            out = model(batch.ids, batch.id_lengths, batch.mels,
                        teacher_poses=batch.poses, p_teacher=p,
                        generator=sched_gen)
            speech_loss = tts_loss(out["mel_pre"], out["mel_post"],
                                   out["stop_logits"], batch.mels, batch.stops,
                                   batch.frame_mask)
            g_mse = masked_gesture_loss(out["gesture"], batch.poses,
                                        batch.pose_mask)
            loss = speech_loss + stage.gesture_weight * g_mse
            record.update(tts_loss=float(speech_loss.item()),
                          gesture_mse=float(g_mse.item()),
                          p_teacher=p)
        else:  # isg_st
            p = teacher_forcing_probability(epoch, schedule)
            with torch.no_grad():
                speech_out = model.speech_core(batch.ids, batch.id_lengths,
                                               batch.mels)
            inputs = (speech_out["attn_states"][:, ::model.gesture_cfg.frame_ratio]
                      if model.gesture_cfg.input_source == "attention_states"
                      else speech_out["mel_post"][:, ::model.gesture_cfg.frame_ratio])
            init = model.init_pose().to(inputs.dtype)
            gesture = model.gesture(inputs, init, batch.poses, p, sched_gen)
            g_mse = masked_gesture_loss(gesture, batch.poses, batch.pose_mask)
            loss = g_mse
            record.update(gesture_mse=float(g_mse.item()), p_teacher=p)
            if stage.use_gan and discriminator is not None:
                T = batch.mels.shape[1]
                fake_motion = _upsample_batch_poses(
                    gesture, batch.pose_lengths, batch.mel_lengths, T)
                real_motion = _upsample_batch_poses(
                    batch.poses, batch.pose_lengths, batch.mel_lengths, T)
                gen_mel = speech_out["mel_post"]
                for _ in range(max(1, discriminator.cfg.update_ratio)):
                    d_real = discriminator(batch.mels, real_motion)
                    d_fake_det = discriminator(gen_mel, fake_motion.detach())
                    d_loss, _ = gan_losses(d_real, d_fake_det,
                                           stage.gan_weight)
                    d_opt.zero_grad()
                    d_loss.backward()
                    d_opt.step()
                d_fake = discriminator(gen_mel, fake_motion)
                _, g_gan = gan_losses(d_real.detach(), d_fake,
                                      stage.gan_weight)
                loss = loss + g_gan
                record.update(d_loss=float(d_loss.item()),
                              g_gan=float(g_gan.item()))

        opt.zero_grad()
        loss.backward()
        if stage.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(trainable, stage.grad_clip)
        opt.step()
        record["loss"] = float(loss.item())

        last = it + 1 == stage.iterations
        if (it + 1) % stage.eval_interval == 0 or last:
            record["val_speech_mse"] = eval_speech_mse(model.speech_core, val)
            if not speech_only:
                record["val_gesture_mse"] = eval_gesture_mse(model, val)
            record["wall_time"] = time.perf_counter() - t0
            metrics.append(record)
        _periodic_checkpoint(stage, stage_dir, model, meta, it + 1)

    ckpt = save_checkpoint(stage_dir / "checkpoint_final.npz", model, meta)
    metrics_path = stage_dir / "metrics.jsonl"
    _write_metrics(metrics_path, metrics)
    return StageResult(stage, ckpt, metrics_path, metrics, model, meta)


def _run_flow(stage, stage_dir, manifest, data_cfg, checkpoint_in, rng
              ) -> StageResult:
    pose_probe = data_mod.prepare_flow_data(manifest, data_cfg)
    n_mels = pose_probe.n_mels
    motion_dim = pose_probe.examples[0].joint.shape[1] - n_mels
    if stage.model_size == "reference":
        flow_cfg = FlowConfig(n_mels=n_mels, motion_dim=motion_dim,
                              n_symbols=pose_probe.tokenizer.n_symbols)
    else:
        flow_cfg = toy_flow_config(n_mels=n_mels, motion_dim=motion_dim,
                                   n_symbols=pose_probe.tokenizer.n_symbols)
    flow_cfg = apply_overrides(flow_cfg, stage.overrides.get("flow", {}))
    data = (pose_probe if flow_cfg.pad_channels == 0 else
            data_mod.prepare_flow_data(manifest, data_cfg,
                                       squeeze=flow_cfg.squeeze,
                                       pad_channels=flow_cfg.pad_channels,
                                       pad_seed=stage.seed))

    model = GlowISG(flow_cfg)
    model.set_output_stats(
        np.concatenate([data.joint_mean,
                        np.zeros(flow_cfg.pad_channels)]),
        np.concatenate([data.joint_std, np.ones(flow_cfg.pad_channels)]))
    if checkpoint_in is not None:
        state, _ = load_checkpoint(checkpoint_in)
        load_into_model(model, state)
    opt = torch.optim.Adam(model.parameters(), lr=stage.learning_rate)
    model.train()

    meta = {
        "regime": stage.regime,
        "model": stage.model,
        "iteration": stage.iterations,
        "seed": stage.seed,
        "configs": {"flow": asdict_config(flow_cfg)},
        "stats": data.stats.to_json(),
        "joint_mean": data.joint_mean.tolist(),
        "joint_std": data.joint_std.tolist(),
        "tokenizer_mode": data_cfg.tokenizer_mode,
        "sample_rate": 24000,
        "mel_fps": 60.0,
        "skeleton": _skeleton_meta(data.stats.joint_names),
    }
    train = data.split("train") or data.examples
    val = data.split("val") or train
    metrics: list[dict] = []
    t0 = time.perf_counter()
    epoch = 0
    order: list[int] = []

    def flow_losses(example, compute_grad=True):
        ids = torch.as_tensor(example.ids).unsqueeze(0)
        x = torch.as_tensor(example.joint)
        hidden, mu, logs, log_dur = model.prior(ids)
        cond = hidden.mean(dim=1)
        z, logdet = model.flow(x.T.unsqueeze(0), cond)
        z0 = z[0].T
        prior = TokenPrior(mu=mu[0].detach().numpy().astype(np.float64),
                           sigma=np.exp(logs[0].detach().numpy()
                                        .astype(np.float64)),
                           log_durations=np.zeros(ids.shape[1]))
        align = mas_align(z0.detach().numpy().astype(np.float64), prior)
        idx = torch.as_tensor(align.assignment)
        mu_a = mu[0][idx]
        logs_a = logs[0][idx]
        T, C = x.shape
        log_n = (-0.5 * float(np.log(2 * np.pi)) - logs_a
                 - (z0 - mu_a) ** 2 * torch.exp(-2 * logs_a) / 2).sum()
        nll = -(log_n + logdet) / (T * C)
        counts = torch.as_tensor(
            align.durations(ids.shape[1]), dtype=log_dur.dtype)
        dur_loss = torch.nn.functional.mse_loss(
            log_dur[0], torch.log(counts))
        return nll, dur_loss

    for it in range(stage.iterations):
        if not order:
            order = list(rng.permutation(len(train)))
            epoch += 1
        example = train[order.pop()]
        nll, dur_loss = flow_losses(example)
        loss = nll + dur_loss
        opt.zero_grad()
        loss.backward()
        if stage.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), stage.grad_clip)
        opt.step()

        last = it + 1 == stage.iterations
        if (it + 1) % stage.eval_interval == 0 or last:
            model.eval()
            with torch.no_grad():
                val_nll = float(np.mean([flow_losses(e)[0].item()
                                         for e in val]))
            model.train()
            metrics.append({"iteration": it + 1, "epoch": epoch,
                            "loss": float(loss.item()),
                            "nll": float(nll.item()),
                            "duration_loss": float(dur_loss.item()),
                            "val_nll": val_nll,
                            "wall_time": time.perf_counter() - t0})
        _periodic_checkpoint(stage, stage_dir, model, meta, it + 1)

    ckpt = save_checkpoint(stage_dir / "checkpoint_final.npz", model, meta)
    metrics_path = stage_dir / "metrics.jsonl"
    _write_metrics(metrics_path, metrics)
    return StageResult(stage, ckpt, metrics_path, metrics, model, meta)


def _run_pipeline_gesture(stage, stage_dir, manifest, data_cfg, checkpoint_in,
                          rng) -> StageResult:
    data = data_mod.prepare_pipeline_gesture_data(manifest, data_cfg)
    pose_dim = data.examples[0].poses.shape[1]
    n_mels = data.examples[0].audio.shape[1]
    if stage.model_size == "reference":
        cfg = AudioGestureConfig(pose_dim=pose_dim)
    else:
        cfg = toy_audio_gesture_config(pose_dim=pose_dim)
    cfg = apply_overrides(cfg, stage.overrides.get("audio_gesture", {}))

    model = AudioGestureFlow(cfg, n_mels=n_mels)
    silence_norm = (float(np.log(1e-5)) - data.stats.mel_mean) / data.stats.mel_std
    model.set_output_stats(np.zeros(pose_dim), silence_norm)
    if checkpoint_in is not None:
        state, _ = load_checkpoint(checkpoint_in)
        load_into_model(model, state)
    opt = torch.optim.Adam(model.parameters(), lr=stage.learning_rate)
    model.train()

    meta = {
        "regime": stage.regime,
        "model": stage.model,
        "iteration": stage.iterations,
        "seed": stage.seed,
        "configs": {"audio_gesture": asdict_config(cfg)},
        "stats": data.stats.to_json(),
        "tokenizer_mode": data_cfg.tokenizer_mode,
        "sample_rate": data_cfg.audio.sample_rate,
        "mel_fps": data_cfg.audio.fps,
        "gesture_fps": data.gesture_fps,
        "skeleton": _skeleton_meta(data.stats.joint_names),
    }
    train = data.split("train") or data.examples
    val = data.split("val") or train
    metrics: list[dict] = []
    t0 = time.perf_counter()
    epoch = 0
    order: list[int] = []
    for it in range(stage.iterations):
        if not order:
            order = list(rng.permutation(len(train)))
            epoch += 1
        e = train[order.pop()]
        nll = model.log_prob(torch.as_tensor(e.poses),
                             torch.as_tensor(e.audio))
        opt.zero_grad()
        nll.backward()
        if stage.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), stage.grad_clip)
        opt.step()

        last = it + 1 == stage.iterations
        if (it + 1) % stage.eval_interval == 0 or last:
            model.eval()
            with torch.no_grad():
                val_nll = float(np.mean(
                    [model.log_prob(torch.as_tensor(e.poses),
                                    torch.as_tensor(e.audio)).item()
                     for e in val]))
            model.train()
            metrics.append({"iteration": it + 1, "epoch": epoch,
                            "loss": float(nll.item()), "val_nll": val_nll,
                            "wall_time": time.perf_counter() - t0})
        _periodic_checkpoint(stage, stage_dir, model, meta, it + 1)

    ckpt = save_checkpoint(stage_dir / "checkpoint_final.npz", model, meta)
    metrics_path = stage_dir / "metrics.jsonl"
    _write_metrics(metrics_path, metrics)
    return StageResult(stage, ckpt, metrics_path, metrics, model, meta)


def run_plan(plan: TrainPlan, work_dir: str | Path,
             data_cfg: DataConfig | None = None,
             plan_root: Path | None = None) -> list[StageResult]:
    """Validate then execute every stage, chaining checkpoints."""
    errors = validate_plan(plan, root=plan_root)
    if errors:
        raise PlanError("invalid plan:\n" + "\n".join(f"- {e}" for e in errors))
    results: list[StageResult] = []
    previous = None
    for stage in plan.stages:
        result = run_stage(stage, work_dir, previous_checkpoint=previous,
                           data_cfg=data_cfg)
        previous = result.checkpoint_path
        results.append(result)
    return results
