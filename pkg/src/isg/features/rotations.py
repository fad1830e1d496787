"""Exponential-map (axis-angle) encoding of joint rotations.

Conventions: right-handed rotation matrices acting on column vectors;
exponential-map vectors have magnitude equal to the rotation angle,
canonicalized to [0, pi].
"""

from __future__ import annotations

import numpy as np


class RotationError(ValueError):
    """Raised for inputs that are not valid rotation matrices."""


def _skew(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def expmap_to_rotation(expmap: np.ndarray) -> np.ndarray:
    """Rodrigues' formula; accepts (..., 3), returns (..., 3, 3)."""
    v = np.asarray(expmap, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    small = theta[..., 0] < 1e-12
    axis = np.where(theta > 1e-12, v / np.maximum(theta, 1e-300), 0.0)
    K = _skew(axis)
    t = theta[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + np.sin(t) * K + (1.0 - np.cos(t)) * (K @ K)
    if np.any(small):
        # first-order map is exact to machine precision for tiny angles
        R_small = eye + _skew(v)
        R = np.where(small[..., None, None], R_small, R)
    return R


def rotation_to_expmap(rotation: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Axis-angle vector with angle in [0, pi]; validates orthonormality."""
    R = np.asarray(rotation, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise RotationError(f"expected (..., 3, 3) matrix, got {R.shape}")
    err = np.abs(R @ np.swapaxes(R, -1, -2) - np.eye(3)).max(axis=(-1, -2))
    det = np.linalg.det(R)
    if np.any(err > 10 * tol) or np.any(np.abs(det - 1.0) > 10 * tol):
        raise RotationError(
            f"input not orthonormal with det 1 (max |R R^T - I| = {err.max():.3g}, "
            f"det range [{det.min():.6f}, {det.max():.6f}])")

    trace = np.trace(R, axis1=-2, axis2=-1)
    cos = np.clip((trace - 1.0) / 2.0, -1.0, 1.0)
    raw = np.stack([R[..., 2, 1] - R[..., 1, 2],
                    R[..., 0, 2] - R[..., 2, 0],
                    R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    # |raw| = 2 sin(theta); atan2 keeps the angle consistent with the
    # skew part where arccos of the trace alone loses precision near pi
    sin = np.linalg.norm(raw, axis=-1) / 2.0
    theta = np.arctan2(sin, cos)

    out = np.zeros(R.shape[:-2] + (3,))

    generic = (theta >= 1e-7) & (np.pi - theta >= 1e-9)
    if np.any(generic):
        scale = np.where(generic, theta / np.maximum(2.0 * sin, 1e-300), 0.0)
        out = np.where(generic[..., None], raw * scale[..., None], out)

    tiny = theta < 1e-7
    if np.any(tiny):
        # raw/2 = sin(theta)*axis ~= theta*axis for theta -> 0
        out = np.where(tiny[..., None], raw / 2.0, out)

    near_pi = np.pi - theta < 1e-9
    if np.any(near_pi):
        # axis from the symmetric part: R = I + 2 K^2 at theta = pi
        B = (R + np.eye(3)) / 2.0
        diag = np.stack([B[..., 0, 0], B[..., 1, 1], B[..., 2, 2]], axis=-1)
        axis = np.sqrt(np.clip(diag, 0.0, None))
        # fix relative signs from the off-diagonal products
        flat_axis = axis.reshape(-1, 3)
        flat_B = B.reshape(-1, 3, 3)
        flat_mask = near_pi.reshape(-1)
        for i in np.nonzero(flat_mask)[0]:
            a = flat_axis[i]
            k = int(np.argmax(a))
            for j in range(3):
                if j != k and a[j] > 0 and flat_B[i, k, j] < 0:
                    a[j] = -a[j]
            # canonical sign: first nonzero component positive
            for j in range(3):
                if abs(a[j]) > 1e-12:
                    if a[j] < 0:
                        a[:] = -a
                    break
            n = np.linalg.norm(a)
            flat_axis[i] = a / n if n > 0 else a
        axis = flat_axis.reshape(axis.shape)
        out = np.where(near_pi[..., None], axis * theta[..., None], out)
    return out
