"""Skeleton hierarchies, forward kinematics, and BVH import/export.

BVH rotations are converted to exponential maps on load; the writer emits
XYZ rotation channels (plus zeroed root translation for player
compatibility).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from isg.features.motion import MotionSequence
from isg.features.rotations import expmap_to_rotation, rotation_to_expmap


@dataclass
class Skeleton:
    joint_names: tuple[str, ...]
    parents: tuple[int, ...]          # -1 marks the root
    offsets: np.ndarray               # (J, 3) bone offsets from parent

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise KeyError(f"joint {name!r} not in skeleton "
                           f"{list(self.joint_names)}") from None

    def groups(self) -> dict[str, list[str]]:
        """Joint names bucketed into torso / right arm / left arm."""
        out: dict[str, list[str]] = {"torso": [], "right_arm": [], "left_arm": []}
        for name in self.joint_names:
            low = name.lower()
            if low.startswith(("right", "r_")) or re.match(r"^r[A-Z]", name):
                out["right_arm"].append(name)
            elif low.startswith(("left", "l_")) or re.match(r"^l[A-Z]", name):
                out["left_arm"].append(name)
            else:
                out["torso"].append(name)
        return out


def toy_skeleton() -> Skeleton:
    """10-joint upper-body skeleton shipped with the synthetic corpus."""
    names = ("Hips", "Spine", "Neck", "Head",
             "RightArm", "RightForeArm", "RightHand",
             "LeftArm", "LeftForeArm", "LeftHand")
    parents = (-1, 0, 1, 2, 1, 4, 5, 1, 7, 8)
    offsets = np.array([
        [0.0, 0.0, 0.0],
        [0.0, 0.20, 0.0],
        [0.0, 0.25, 0.0],
        [0.0, 0.15, 0.0],
        [-0.18, 0.22, 0.0],
        [-0.28, 0.0, 0.0],
        [-0.24, 0.0, 0.0],
        [0.18, 0.22, 0.0],
        [0.28, 0.0, 0.0],
        [0.24, 0.0, 0.0],
    ])
    return Skeleton(names, parents, offsets)


def forward_kinematics(skeleton: Skeleton, motion: MotionSequence) -> np.ndarray:
    """Global joint positions, shape (frames, joints, 3); root at origin."""
    if motion.joint_names and tuple(motion.joint_names) != tuple(skeleton.joint_names):
        raise KeyError(
            f"motion joints {list(motion.joint_names)} do not match skeleton "
            f"{list(skeleton.joint_names)}")
    J = skeleton.n_joints
    if motion.n_channels != 3 * J:
        raise ValueError(f"expected {3 * J} channels, got {motion.n_channels}")
    T = motion.n_frames
    expmaps = motion.values.reshape(T, J, 3)
    rotations = expmap_to_rotation(expmaps)          # (T, J, 3, 3)
    positions = np.zeros((T, J, 3))
    global_rot = np.zeros((T, J, 3, 3))
    for j in range(J):
        p = skeleton.parents[j]
        if p < 0:
            global_rot[:, j] = rotations[:, j]
            positions[:, j] = skeleton.offsets[j]
        else:
            positions[:, j] = positions[:, p] + np.einsum(
                "tij,j->ti", global_rot[:, p], skeleton.offsets[j])
            global_rot[:, j] = global_rot[:, p] @ rotations[:, j]
    return positions


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])

_ROT = {"X": _rot_x, "Y": _rot_y, "Z": _rot_z}


def _euler_xyz_from_matrix(R: np.ndarray) -> tuple[float, float, float]:
    """Angles (x, y, z) such that R = Rx @ Ry @ Rz."""
    sy = np.clip(R[0, 2], -1.0, 1.0)
    y = np.arcsin(sy)
    if abs(sy) < 1.0 - 1e-9:
        x = np.arctan2(-R[1, 2], R[2, 2])
        z = np.arctan2(-R[0, 1], R[0, 0])
    else:
        # gimbal lock: fold z into x
        z = 0.0
        x = np.arctan2(R[1, 0], R[1, 1])
    return float(x), float(y), float(z)


def write_bvh(path: str | Path, skeleton: Skeleton, motion: MotionSequence) -> None:
    """Export motion as BVH with XYZ rotation channels in degrees."""
    J = skeleton.n_joints
    if motion.n_channels != 3 * J:
        raise ValueError(f"expected {3 * J} channels, got {motion.n_channels}")
    children: list[list[int]] = [[] for _ in range(J)]
    root = 0
    for j, p in enumerate(skeleton.parents):
        if p < 0:
            root = j
        else:
            children[p].append(j)

    lines: list[str] = ["HIERARCHY"]

    def emit(j: int, depth: int):
        pad = "  " * depth
        tag = "ROOT" if skeleton.parents[j] < 0 else "JOINT"
        lines.append(f"{pad}{tag} {skeleton.joint_names[j]}")
        lines.append(f"{pad}{{")
        off = skeleton.offsets[j]
        lines.append(f"{pad}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
        if skeleton.parents[j] < 0:
            lines.append(f"{pad}  CHANNELS 6 Xposition Yposition Zposition "
                         "Xrotation Yrotation Zrotation")
        else:
            lines.append(f"{pad}  CHANNELS 3 Xrotation Yrotation Zrotation")
        if children[j]:
            for c in children[j]:
                emit(c, depth + 1)
        else:
            lines.append(f"{pad}  End Site")
            lines.append(f"{pad}  {{")
            lines.append(f"{pad}    OFFSET 0.000000 0.050000 0.000000")
            lines.append(f"{pad}  }}")
        lines.append(f"{pad}}}")

    emit(root, 0)
    T = motion.n_frames
    lines.append("MOTION")
    lines.append(f"Frames: {T}")
    lines.append(f"Frame Time: {1.0 / motion.fps:.8f}")

    order = _dfs_order(skeleton)
    expmaps = motion.values.reshape(T, J, 3)
    for t in range(T):
        row: list[str] = []
        for j in order:
            R = expmap_to_rotation(expmaps[t, j])
            x, y, z = _euler_xyz_from_matrix(R)
            if skeleton.parents[j] < 0:
                row.extend(["0.000000"] * 3)
            row.extend(f"{np.degrees(a):.6f}" for a in (x, y, z))
        lines.append(" ".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _dfs_order(skeleton: Skeleton) -> list[int]:
    children: list[list[int]] = [[] for _ in range(skeleton.n_joints)]
    root = 0
    for j, p in enumerate(skeleton.parents):
        if p < 0:
            root = j
        else:
            children[p].append(j)
    order: list[int] = []

    def walk(j: int):
        order.append(j)
        for c in children[j]:
            walk(c)

    walk(root)
    return order


def parse_bvh(path: str | Path) -> tuple[Skeleton, MotionSequence]:
    """Read a BVH file; rotations are converted to exponential maps.

    Root translation channels are parsed but discarded (pose features are
    rotations only).
    """
    text = Path(path).read_text(encoding="utf-8")
    tokens = text.split()
    pos = 0

    names: list[str] = []
    parents: list[int] = []
    offsets: list[list[float]] = []
    channels: list[list[str]] = []   # per joint, in file order

    def expect(tok: str):
        nonlocal pos
        if tokens[pos].upper() != tok.upper():
            raise ValueError(f"BVH parse error: expected {tok} got {tokens[pos]}")
        pos += 1

    expect("HIERARCHY")

    def parse_joint(parent: int):
        nonlocal pos
        kind = tokens[pos].upper()
        if kind not in ("ROOT", "JOINT"):
            raise ValueError(f"BVH parse error at {tokens[pos]}")
        pos += 1
        name = tokens[pos]
        pos += 1
        expect("{")
        idx = len(names)
        names.append(name)
        parents.append(parent)
        offsets.append([0.0, 0.0, 0.0])
        channels.append([])
        while True:
            tok = tokens[pos].upper()
            if tok == "OFFSET":
                pos += 1
                offsets[idx] = [float(tokens[pos + k]) for k in range(3)]
                pos += 3
            elif tok == "CHANNELS":
                pos += 1
                n = int(tokens[pos])
                pos += 1
                channels[idx] = [tokens[pos + k] for k in range(n)]
                pos += n
            elif tok in ("JOINT", "ROOT"):
                parse_joint(idx)
            elif tok == "END":
                pos += 2  # "End Site"
                expect("{")
                expect("OFFSET")
                pos += 3
                expect("}")
            elif tok == "}":
                pos += 1
                return
            else:
                raise ValueError(f"BVH parse error at {tokens[pos]}")

    parse_joint(-1)
    expect("MOTION")
    expect("Frames:")
    n_frames = int(tokens[pos]); pos += 1
    expect("Frame")
    expect("Time:")
    frame_time = float(tokens[pos]); pos += 1

    values = np.array([float(t) for t in tokens[pos:]], dtype=np.float64)
    n_ch = sum(len(c) for c in channels)
    if len(values) < n_frames * n_ch:
        raise ValueError(f"BVH motion block has {len(values)} values, "
                         f"expected {n_frames * n_ch}")
    values = values[:n_frames * n_ch].reshape(n_frames, n_ch)

    J = len(names)
    expmaps = np.zeros((n_frames, J, 3))
    col = 0
    for j in range(J):
        rot_ops = []
        for ch in channels[j]:
            ch_up = ch.lower()
            if ch_up.endswith("rotation"):
                rot_ops.append((ch[0].upper(), col))
            col += 1
        for t in range(n_frames):
            R = np.eye(3)
            for axis, c in rot_ops:
                R = R @ _ROT[axis](np.radians(values[t, c]))
            expmaps[t, j] = rotation_to_expmap(R)

    skeleton = Skeleton(tuple(names), tuple(parents), np.asarray(offsets))
    motion = MotionSequence(expmaps.reshape(n_frames, 3 * J),
                            fps=1.0 / frame_time, joint_names=tuple(names))
    return skeleton, motion
