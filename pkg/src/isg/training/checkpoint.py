"""Self-describing checkpoint archives.

A checkpoint is a zip of named arrays (every entry of the model's state
dict, parameters and buffers alike) plus a JSON metadata blob carrying
the model kind, its configuration, normalization statistics, skeleton,
and the iteration counter.  No pickled objects, so archives stay
readable across library versions.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

_META_KEY = "__meta__"
_PARAM_PREFIX = "state/"


def save_checkpoint(path: str | Path, model: torch.nn.Module, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name, tensor in model.state_dict().items():
        arrays[_PARAM_PREFIX + name] = tensor.detach().cpu().numpy()
    arrays[_META_KEY] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (state arrays keyed by parameter name, metadata dict)."""
    path = Path(path)
    with np.load(path) as archive:
        meta = json.loads(bytes(archive[_META_KEY]).decode("utf-8"))
        state = {k[len(_PARAM_PREFIX):]: archive[k].copy()
                 for k in archive.files if k.startswith(_PARAM_PREFIX)}
    return state, meta


def load_into_model(model: torch.nn.Module, state: dict[str, np.ndarray],
                    prefix: str = "", strict: bool = False) -> list[str]:
    """Copy matching arrays into the model; returns names that loaded.

    ``prefix`` restricts loading to a sub-module (e.g. "speech_core.").
    With strict=False, entries present in only one side are skipped, so a
    speech-only checkpoint can seed the speech half of a joint model.
    """
    own = model.state_dict()
    loaded = []
    for name, array in state.items():
        if prefix and not name.startswith(prefix):
            continue
        if name not in own:
            if strict:
                raise KeyError(f"checkpoint key {name!r} not in model")
            continue
        tensor = torch.as_tensor(array)
        if own[name].shape != tensor.shape:
            raise ValueError(
                f"shape mismatch for {name}: checkpoint {tuple(tensor.shape)} "
                f"vs model {tuple(own[name].shape)}")
        own[name].copy_(tensor.to(own[name].dtype))
        loaded.append(name)
    if strict:
        missing = [k for k in own if k.startswith(prefix) and k not in state]
        if missing:
            raise KeyError(f"checkpoint missing keys: {missing[:5]}...")
    return loaded


def state_bytes(model: torch.nn.Module, prefix: str = "") -> dict[str, bytes]:
    """Exact byte content of (a subset of) the model state, for freeze checks."""
    out = {}
    for name, tensor in model.state_dict().items():
        if name.startswith(prefix):
            out[name] = tensor.detach().cpu().numpy().tobytes()
    return out
