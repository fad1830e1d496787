"""Autoregressive seq2seq text-to-mel speech core.

Standard Tacotron-2 layout: conv+BiLSTM text encoder, location-sensitive
attention, a two-LSTM decoder with a prenet on the acoustic feedback, and
a convolutional postnet.  The attention-recurrence hidden state of every
decoder step is exposed ("tapped") so a gesture sub-network can consume
it.

The prenet applies dropout at inference time as well as training time by
default, so free-running synthesis is stochastic; disable via
``prenet_dropout_at_inference=False`` for deterministic output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from isg.config import SpeechCoreConfig
from isg.features.mel import MelSpectrogram
from isg.tokens import Tokenizer, VocabularyError


@dataclass
class AttentionStateSequence:
    """Attention-recurrence hidden output per decoder step."""

    states: np.ndarray        # (steps, H)
    fps: float

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]


@dataclass
class SpeechOutput:
    mel_pre: MelSpectrogram
    mel_post: MelSpectrogram
    stop_logits: np.ndarray
    attn: AttentionStateSequence
    alignment_matrix: np.ndarray   # (steps, tokens)
    truncated: bool = False


class Prenet(nn.Module):
    def __init__(self, in_dim, dims, dropout, always_dropout):
        super().__init__()
        sizes = [in_dim] + list(dims)
        self.layers = nn.ModuleList(
            nn.Linear(a, b, bias=False) for a, b in zip(sizes[:-1], sizes[1:]))
        self.dropout = dropout
        self.always_dropout = always_dropout

    def forward(self, x):
        for layer in self.layers:
            active = self.training or self.always_dropout
            x = F.dropout(F.relu(layer(x)), p=self.dropout, training=active)
        return x


class LocationAttention(nn.Module):
    """Content + location-sensitive energies with masked softmax."""

    def __init__(self, query_dim, memory_dim, attn_dim, n_filters, kernel):
        super().__init__()
        self.query_layer = nn.Linear(query_dim, attn_dim, bias=False)
        self.memory_layer = nn.Linear(memory_dim, attn_dim, bias=False)
        self.location_conv = nn.Conv1d(2, n_filters, kernel_size=kernel,
                                       padding=(kernel - 1) // 2, bias=False)
        self.location_dense = nn.Linear(n_filters, attn_dim, bias=False)
        self.v = nn.Linear(attn_dim, 1, bias=False)

    def forward(self, query, memory_proc, attn_weights_cat, mask):
        # query (B, Q); memory_proc (B, L, A); attn_weights_cat (B, 2, L)
        loc = self.location_dense(self.location_conv(attn_weights_cat).transpose(1, 2))
        energies = self.v(torch.tanh(
            self.query_layer(query).unsqueeze(1) + memory_proc + loc)).squeeze(-1)
        if mask is not None:
            energies = energies.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(energies, dim=1)
        return weights


class Encoder(nn.Module):
    def __init__(self, cfg: SpeechCoreConfig):
        super().__init__()
        self.embedding = nn.Embedding(cfg.n_symbols, cfg.symbol_embedding_dim)
        convs = []
        in_ch = cfg.symbol_embedding_dim
        for _ in range(cfg.encoder_n_convs):
            convs.append(nn.Conv1d(in_ch, cfg.encoder_dim, cfg.encoder_kernel,
                                   padding=(cfg.encoder_kernel - 1) // 2))
            convs.append(nn.BatchNorm1d(cfg.encoder_dim))
            in_ch = cfg.encoder_dim
        self.convs = nn.ModuleList(convs)
        self.lstm = nn.LSTM(cfg.encoder_dim, cfg.encoder_dim // 2,
                            batch_first=True, bidirectional=True)

    def forward(self, ids, lengths=None):
        x = self.embedding(ids).transpose(1, 2)
        for i in range(0, len(self.convs), 2):
            x = F.dropout(F.relu(self.convs[i + 1](self.convs[i](x))),
                          0.5, self.training)
        x = x.transpose(1, 2)
        self.lstm.flatten_parameters()
        out, _ = self.lstm(x)
        return out


class Postnet(nn.Module):
    def __init__(self, cfg: SpeechCoreConfig):
        super().__init__()
        layers = []
        dims = ([cfg.n_mels] + [cfg.postnet_dim] * (cfg.postnet_n_convs - 1)
                + [cfg.n_mels])
        for i in range(cfg.postnet_n_convs):
            layers.append(nn.Conv1d(dims[i], dims[i + 1], cfg.postnet_kernel,
                                    padding=(cfg.postnet_kernel - 1) // 2))
            layers.append(nn.BatchNorm1d(dims[i + 1]))
        self.convs = nn.ModuleList(layers)
        self.n = cfg.postnet_n_convs

    def forward(self, x):
        # x (B, T, n_mels) -> residual of same shape
        y = x.transpose(1, 2)
        for i in range(self.n):
            y = self.convs[2 * i + 1](self.convs[2 * i](y))
            if i < self.n - 1:
                y = torch.tanh(y)
            y = F.dropout(y, 0.5, self.training)
        return y.transpose(1, 2)


class SpeechCore(nn.Module):
    def __init__(self, cfg: SpeechCoreConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.prenet = Prenet(cfg.n_mels * cfg.n_frames_per_step,
                             cfg.prenet_dims, cfg.prenet_dropout,
                             cfg.prenet_dropout_at_inference)
        self.attention_rnn = nn.LSTMCell(
            cfg.prenet_dims[-1] + cfg.encoder_dim, cfg.attention_rnn_dim)
        self.attention = LocationAttention(
            cfg.attention_rnn_dim, cfg.encoder_dim, cfg.attention_dim,
            cfg.location_filters, cfg.location_kernel)
        self.decoder_rnn = nn.LSTMCell(
            cfg.attention_rnn_dim + cfg.encoder_dim, cfg.decoder_rnn_dim)
        self.mel_proj = nn.Linear(cfg.decoder_rnn_dim + cfg.encoder_dim,
                                  cfg.n_mels * cfg.n_frames_per_step)
        self.gate = nn.Linear(cfg.decoder_rnn_dim + cfg.encoder_dim, 1)
        self.postnet = Postnet(cfg)

    @property
    def attention_state_dim(self) -> int:
        return self.cfg.attention_rnn_dim

    def _zero_state(self, batch, length, memory):
        dev, dt = memory.device, memory.dtype
        z = lambda *shape: torch.zeros(*shape, device=dev, dtype=dt)
        return {
            "attn_h": z(batch, self.cfg.attention_rnn_dim),
            "attn_c": z(batch, self.cfg.attention_rnn_dim),
            "dec_h": z(batch, self.cfg.decoder_rnn_dim),
            "dec_c": z(batch, self.cfg.decoder_rnn_dim),
            "weights": z(batch, length),
            "weights_cum": z(batch, length),
            "context": z(batch, self.cfg.encoder_dim),
        }

    def _step(self, prev_frame, state, memory, memory_proc, mask):
        cfg = self.cfg
        prenet_out = self.prenet(prev_frame)
        attn_in = torch.cat([prenet_out, state["context"]], dim=-1)
        state["attn_h"], state["attn_c"] = self.attention_rnn(
            attn_in, (state["attn_h"], state["attn_c"]))
        attn_h = F.dropout(state["attn_h"], cfg.p_attention_dropout, self.training)
        cat = torch.stack([state["weights"], state["weights_cum"]], dim=1)
        weights = self.attention(attn_h, memory_proc, cat, mask)
        state["weights"] = weights
        state["weights_cum"] = state["weights_cum"] + weights
        state["context"] = torch.bmm(weights.unsqueeze(1), memory).squeeze(1)
        dec_in = torch.cat([attn_h, state["context"]], dim=-1)
        state["dec_h"], state["dec_c"] = self.decoder_rnn(
            dec_in, (state["dec_h"], state["dec_c"]))
        dec_h = F.dropout(state["dec_h"], cfg.p_decoder_dropout, self.training)
        proj_in = torch.cat([dec_h, state["context"]], dim=-1)
        frame = self.mel_proj(proj_in)
        stop_logit = self.gate(proj_in).squeeze(-1)
        return frame, stop_logit, attn_h, weights

    def _memory(self, ids, lengths):
        memory = self.encoder(ids, lengths)
        memory_proc = self.attention.memory_layer(memory)
        if lengths is None:
            mask = None
        else:
            idx = torch.arange(memory.shape[1], device=memory.device)
            mask = idx.unsqueeze(0) < lengths.unsqueeze(1)
        return memory, memory_proc, mask

    def forward(self, ids, lengths, target_mels, collect_attention=True):
        """Teacher-forced pass.

        ids (B, L) int64; lengths (B,) or None; target_mels (B, T, n_mels)
        with T divisible by n_frames_per_step.  Returns a dict of batched
        tensors: mel_pre/mel_post (B, T, M), stop_logits (B, steps),
        attention states (B, steps, H), alignments (B, steps, L).
        """
        cfg = self.cfg
        B, T, M = target_mels.shape
        if T % cfg.n_frames_per_step:
            raise ValueError("target length must be divisible by n_frames_per_step")
        steps = T // cfg.n_frames_per_step
        memory, memory_proc, mask = self._memory(ids, lengths)
        state = self._zero_state(B, memory.shape[1], memory)
        go = torch.zeros(B, M * cfg.n_frames_per_step,
                         device=memory.device, dtype=memory.dtype)
        dec_inputs = [go] + [
            target_mels[:, t * cfg.n_frames_per_step:(t + 1) * cfg.n_frames_per_step]
            .reshape(B, -1) for t in range(steps - 1)]
        frames, stops, attns, aligns = [], [], [], []
        for t in range(steps):
            frame, stop, attn_h, weights = self._step(
                dec_inputs[t], state, memory, memory_proc, mask)
            frames.append(frame)
            stops.append(stop)
            aligns.append(weights)
            if collect_attention:
                attns.append(attn_h)
        mel_pre = torch.stack(frames, dim=1).reshape(B, T, M)
        mel_post = mel_pre + self.postnet(mel_pre)
        out = {
            "mel_pre": mel_pre,
            "mel_post": mel_post,
            "stop_logits": torch.stack(stops, dim=1),
            "alignments": torch.stack(aligns, dim=1),
        }
        if collect_attention:
            out["attn_states"] = torch.stack(attns, dim=1)
        return out

    @torch.no_grad()
    def infer(self, ids):
        """Free-running synthesis for a single sequence (B = 1).

        Stops once sigmoid(stop_logit) exceeds the configured threshold;
        truncates (with a flag) at max_decoder_steps.
        """
        cfg = self.cfg
        if ids.ndim == 1:
            ids = ids.unsqueeze(0)
        memory, memory_proc, mask = self._memory(ids, None)
        state = self._zero_state(1, memory.shape[1], memory)
        prev = torch.zeros(1, cfg.n_mels * cfg.n_frames_per_step,
                           device=memory.device, dtype=memory.dtype)
        frames, stops, attns, aligns = [], [], [], []
        truncated = False
        for _ in range(cfg.max_decoder_steps):
            frame, stop, attn_h, weights = self._step(
                prev, state, memory, memory_proc, mask)
            frames.append(frame)
            stops.append(stop)
            attns.append(attn_h)
            aligns.append(weights)
            if torch.sigmoid(stop).item() > cfg.stop_threshold:
                break
            prev = frame
        else:
            truncated = True
        mel_pre = torch.stack(frames, dim=1).reshape(1, -1, cfg.n_mels)
        mel_post = mel_pre + self.postnet(mel_pre)
        return {
            "mel_pre": mel_pre,
            "mel_post": mel_post,
            "stop_logits": torch.stack(stops, dim=1),
            "alignments": torch.stack(aligns, dim=1),
            "attn_states": torch.stack(attns, dim=1),
            "truncated": truncated,
        }


def encode_text(model: SpeechCore, tokens: list[str],
                tokenizer: Tokenizer) -> np.ndarray:
    """Eval-mode encoder states, one per token."""
    if not tokens:
        raise ValueError("token list is empty")
    ids = torch.tensor([tokenizer.encode(tokens)], dtype=torch.long)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            states = model.encoder(ids)
    finally:
        model.train(was_training)
    return states[0].cpu().numpy()


def tts_loss(mel_pre, mel_post, stop_logits, target_mel, target_stops,
             frame_mask=None):
    """MSE(mel_pre) + MSE(mel_post) + BCE(stop logits), all masked means.

    Accepts (T, M)/(B, T, M) tensors; shapes of prediction and target
    must agree exactly.
    """
    if mel_pre.shape != target_mel.shape or mel_post.shape != target_mel.shape:
        raise ValueError(
            f"mel shape mismatch: {tuple(mel_pre.shape)} vs {tuple(target_mel.shape)}")
    if stop_logits.shape != target_stops.shape:
        raise ValueError(
            f"stop shape mismatch: {tuple(stop_logits.shape)} vs "
            f"{tuple(target_stops.shape)}")
    if frame_mask is None:
        mse_pre = F.mse_loss(mel_pre, target_mel)
        mse_post = F.mse_loss(mel_post, target_mel)
        bce = F.binary_cross_entropy_with_logits(stop_logits, target_stops)
    else:
        m = frame_mask.to(mel_pre.dtype)
        denom = m.sum() * mel_pre.shape[-1]
        mse_pre = (((mel_pre - target_mel) ** 2) * m.unsqueeze(-1)).sum() / denom
        mse_post = (((mel_post - target_mel) ** 2) * m.unsqueeze(-1)).sum() / denom
        bce_all = F.binary_cross_entropy_with_logits(
            stop_logits, target_stops, reduction="none")
        bce = (bce_all * m).sum() / m.sum()
    return mse_pre + mse_post + bce


def synthesize_speech(model: SpeechCore, tokens: list[str], tokenizer: Tokenizer,
                      mode: str = "free_running",
                      target_mel: np.ndarray | None = None,
                      mel_fps: float | None = None,
                      sample_rate: int = 22050) -> SpeechOutput:
    """Spec-facing synthesis wrapper returning numpy-backed outputs.

    mode "teacher_forced" requires ``target_mel`` (frames x n_mels);
    "free_running" decodes until the stop token fires.
    """
    if not tokens:
        raise ValueError("token list is empty")
    for tok in tokens:
        if tok not in tokenizer.symbols:
            raise VocabularyError(f"unknown token {tok!r}")
    fps = mel_fps if mel_fps is not None else sample_rate / 256
    ids = torch.tensor([tokenizer.encode(tokens)], dtype=torch.long)
    was_training = model.training
    model.eval()
    try:
        if mode == "teacher_forced":
            if target_mel is None:
                raise ValueError("teacher_forced mode requires a target mel")
            dtype = next(model.parameters()).dtype
            target = torch.as_tensor(np.asarray(target_mel), dtype=dtype).unsqueeze(0)
            with torch.no_grad():
                out = model(ids, None, target)
            truncated = False
        elif mode == "free_running":
            out = model.infer(ids)
            truncated = out["truncated"]
        else:
            raise ValueError(f"unknown mode {mode!r}")
    finally:
        model.train(was_training)
    step_fps = fps / model.cfg.n_frames_per_step
    mk = lambda v: MelSpectrogram(values=v[0].cpu().numpy(), fps=fps,
                                  sample_rate=sample_rate)
    return SpeechOutput(
        mel_pre=mk(out["mel_pre"]),
        mel_post=mk(out["mel_post"]),
        stop_logits=out["stop_logits"][0].cpu().numpy(),
        attn=AttentionStateSequence(out["attn_states"][0].cpu().numpy(), step_fps),
        alignment_matrix=out["alignments"][0].cpu().numpy(),
        truncated=truncated,
    )
