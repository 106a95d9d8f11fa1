"""Rigid kinematic body model and weak-perspective camera.

A 24-joint chain in SMPL joint order with linear shape offsets on the rest
bones and a convex regressor onto the 25 BODY_25 annotation keypoints. The
regressor is hand-built, not fitted to any mesh.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels

N_JOINTS = 24
N_SHAPE = 10
N_KEYPOINTS = 25
BETA_LIMIT = 5.0

JOINT_NAMES = [
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2", "l_ankle",
    "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar", "r_collar", "head",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand", "r_hand",
]
JOINT_PARENTS = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21]

# meters; y up, +x toward the subject's left, +z forward
_REST_OFFSETS = [
    (0.0, 0.0, 0.0), (0.09, -0.08, 0.0), (-0.09, -0.08, 0.0), (0.0, 0.11, -0.01),
    (0.01, -0.38, 0.01), (-0.01, -0.38, 0.01), (0.0, 0.13, 0.0), (0.0, -0.40, -0.02),
    (0.0, -0.40, -0.02), (0.0, 0.06, 0.01), (0.0, -0.05, 0.12), (0.0, -0.05, 0.12),
    (0.0, 0.21, -0.01), (0.07, 0.11, 0.0), (-0.07, 0.11, 0.0), (0.0, 0.09, 0.05),
    (0.11, 0.03, -0.01), (-0.11, 0.03, -0.01), (0.26, 0.0, -0.01), (-0.26, 0.0, -0.01),
    (0.25, 0.01, 0.0), (-0.25, 0.01, 0.0), (0.08, -0.01, 0.0), (-0.08, -0.01, 0.0),
]

KEYPOINT_NAMES = [
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist",
    "mid_hip", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle", "r_eye",
    "l_eye", "r_ear", "l_ear", "l_big_toe", "l_small_toe", "l_heel", "r_big_toe",
    "r_small_toe", "r_heel",
]
KEYPOINT_EDGES = [
    (1, 8), (1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7), (8, 9), (9, 10), (10, 11),
    (8, 12), (12, 13), (13, 14), (1, 0), (0, 15), (15, 17), (0, 16), (16, 18), (14, 19),
    (19, 20), (14, 21), (11, 22), (22, 23), (11, 24),
]
# left/right swap used by horizontal flips
KEYPOINT_FLIP = [0, 1, 5, 6, 7, 2, 3, 4, 8, 12, 13, 14, 9, 10, 11, 16, 15, 18, 17, 22, 23, 24, 19, 20, 21]
NECK_KEYPOINT = 1
PELVIS_KEYPOINT = 8

# keypoint -> {joint: weight}
_REGRESSOR_WEIGHTS = {
    0: {15: 0.8, 12: 0.2},
    1: {12: 0.75, 9: 0.25},
    2: {17: 1.0},
    3: {19: 1.0},
    4: {21: 0.85, 23: 0.15},
    5: {16: 1.0},
    6: {18: 1.0},
    7: {20: 0.85, 22: 0.15},
    8: {0: 0.7, 3: 0.3},
    9: {2: 1.0},
    10: {5: 1.0},
    11: {8: 1.0},
    12: {1: 1.0},
    13: {4: 1.0},
    14: {7: 1.0},
    15: {15: 0.85, 14: 0.15},
    16: {15: 0.85, 13: 0.15},
    17: {15: 0.6, 14: 0.4},
    18: {15: 0.6, 13: 0.4},
    19: {10: 1.0},
    20: {10: 0.6, 7: 0.4},
    21: {10: 0.15, 7: 0.85},
    22: {11: 1.0},
    23: {11: 0.6, 8: 0.4},
    24: {11: 0.15, 8: 0.85},
}

# shape mode -> joints whose rest offset is lengthened along the bone (1.5 cm per unit)
_SHAPE_GROUPS = [
    {4: 1, 5: 1, 7: 1, 8: 1},           # leg length
    {18: 1, 19: 1, 20: 1, 21: 1},       # arm length
    {3: 1, 6: 1, 9: 1},                 # trunk length
    {1: 1, 2: 1},                       # hip width
    {13: 1, 14: 1, 16: 1, 17: 1},       # shoulder width
    {12: 1, 15: 1},                     # neck and head
    {4: 1, 5: 1, 7: -1, 8: -1},         # thigh vs shin
    {18: 1, 19: 1, 20: -1, 21: -1},     # upper arm vs forearm
    {10: 1, 11: 1, 22: 1, 23: 1},       # feet and hands
    {18: 1, 20: 1, 19: -1, 21: -1},     # arm asymmetry
]
_SHAPE_STEP = 0.015


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonDef:
    names: tuple
    parents: np.ndarray          # (N,) int64
    offsets: np.ndarray          # (N, 3) rest bone offsets, meters
    shape_basis: np.ndarray      # (10, N, 3)
    keypoint_regressor: np.ndarray  # (25, N)

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        n = len(parents)
        if n == 0 or parents[0] != -1:
            raise SkeletonError("joint 0 must be the root with parent -1")
        for i in range(1, n):
            if not 0 <= parents[i] < i:
                raise SkeletonError(f"joint {i} has parent {parents[i]}; parents must precede children")
        if len(self.names) != n:
            raise SkeletonError(f"{len(self.names)} names for {n} joints")
        offsets = np.asarray(self.offsets, dtype=np.float64)
        basis = np.asarray(self.shape_basis, dtype=np.float64)
        reg = np.asarray(self.keypoint_regressor, dtype=np.float64)
        if offsets.shape != (n, 3):
            raise SkeletonError(f"offsets must be ({n}, 3), got {offsets.shape}")
        if basis.ndim != 3 or basis.shape[1:] != (n, 3):
            raise SkeletonError(f"shape_basis must be (B, {n}, 3), got {basis.shape}")
        if reg.ndim != 2 or reg.shape[1] != n:
            raise SkeletonError(f"keypoint_regressor must be (K, {n}), got {reg.shape}")
        if np.any(reg < 0) or not np.allclose(reg.sum(axis=1), 1.0, atol=1e-12):
            raise SkeletonError("regressor rows must be convex combinations of joints")
        for name, arr in (("parents", parents), ("offsets", offsets), ("shape_basis", basis), ("keypoint_regressor", reg)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[0]

    @property
    def n_keypoints(self) -> int:
        return self.keypoint_regressor.shape[0]

    def shaped_offsets(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=np.float64)
        return self.offsets + np.tensordot(beta, self.shape_basis, axes=1)

    def to_json(self) -> dict:
        return {
            "joints": [
                {"name": nm, "parent": int(p), "offset": [float(x) for x in o]}
                for nm, p, o in zip(self.names, self.parents, self.offsets)
            ],
            "shape_basis": self.shape_basis.tolist(),
            "keypoint_regressor": self.keypoint_regressor.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SkeletonDef":
        try:
            joints = obj["joints"]
            basis = np.asarray(obj["shape_basis"], dtype=np.float64)
            reg = np.asarray(obj["keypoint_regressor"], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise SkeletonError(f"malformed skeleton file: {exc}") from exc
        n = len(joints)
        if basis.shape != (N_SHAPE, n, 3):
            raise SkeletonError(f"shape_basis must be {N_SHAPE} matrices of {n}x3, got {basis.shape}")
        if reg.shape != (N_KEYPOINTS, n):
            raise SkeletonError(f"keypoint_regressor must be {N_KEYPOINTS}x{n}, got {reg.shape}")
        for j in joints:
            if len(j.get("offset", ())) != 3:
                raise SkeletonError(f"joint {j.get('name')!r} offset must have 3 entries")
        return cls(
            names=tuple(j["name"] for j in joints),
            parents=np.array([j["parent"] for j in joints], dtype=np.int64),
            offsets=np.array([j["offset"] for j in joints], dtype=np.float64),
            shape_basis=basis,
            keypoint_regressor=reg,
        )


def default_skeleton() -> SkeletonDef:
    offsets = np.array(_REST_OFFSETS, dtype=np.float64)
    basis = np.zeros((N_SHAPE, N_JOINTS, 3))
    for b, group in enumerate(_SHAPE_GROUPS):
        for j, sign in group.items():
            direction = offsets[j] / np.linalg.norm(offsets[j])
            basis[b, j] = sign * _SHAPE_STEP * direction
    # Uniform growth is indistinguishable from camera scale under weak
    # perspective, so keep only the proportion-changing part of each mode.
    flat = offsets.reshape(-1)
    for b in range(N_SHAPE):
        mode = basis[b].reshape(-1)
        basis[b] = (mode - (mode @ flat) / (flat @ flat) * flat).reshape(N_JOINTS, 3)
    reg = np.zeros((N_KEYPOINTS, N_JOINTS))
    for k, weights in _REGRESSOR_WEIGHTS.items():
        for j, w in weights.items():
            reg[k, j] = w
    return SkeletonDef(tuple(JOINT_NAMES), np.array(JOINT_PARENTS), offsets, basis, reg)


def load_skeleton(path) -> SkeletonDef:
    with open(path) as fh:
        return SkeletonDef.from_json(json.load(fh))


def save_skeleton(skel: SkeletonDef, path) -> None:
    Path(path).write_text(json.dumps(skel.to_json(), indent=1))


@dataclass(frozen=True)
class CameraParams:
    s: float
    t: tuple

    def __post_init__(self):
        if not (np.isfinite(self.s) and self.s > 0):
            raise ValueError(f"camera scale must be positive, got {self.s}")
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "t", (float(self.t[0]), float(self.t[1])))


def canonicalize_pose(theta) -> np.ndarray:
    """Wrap each joint's rotation angle into [0, 2*pi) along the same axis."""
    v = np.array(theta, dtype=np.float64).reshape(-1, 3)
    ang = np.linalg.norm(v, axis=1)
    big = ang >= 2 * np.pi
    if big.any():
        wrapped = np.mod(ang[big], 2 * np.pi)
        v[big] *= (wrapped / ang[big])[:, None]
    return v.reshape(-1)


def rodrigues(axis_angle) -> np.ndarray:
    """Rotation matrix ``exp([v]_x)`` for a 3-vector axis-angle."""
    v = np.asarray(axis_angle, dtype=np.float64).reshape(1, 3)
    R, _ = kernels.rot_and_left_jacobian(v)
    return R[0]


def _check_theta(skel: SkeletonDef, theta: np.ndarray) -> None:
    if theta.shape != (3 * skel.n_joints,):
        raise ValueError(f"theta must have length {3 * skel.n_joints}, got {theta.shape}")
    if not np.isfinite(theta).all():
        raise ValueError("theta contains NaN or infinite values")


def forward_kinematics(skel: SkeletonDef, theta, beta=None) -> np.ndarray:
    """3D joint positions ``(N, 3)`` in meters, root at its (shaped) rest offset."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    _check_theta(skel, theta)
    beta = np.zeros(skel.n_shape) if beta is None else np.asarray(beta, dtype=np.float64)
    joints, _, _ = kernels.fk_jacobian(skel.parents, skel.shaped_offsets(beta), theta, skel.shape_basis, False)
    return joints


def fk_with_jacobian(skel: SkeletonDef, theta, beta):
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    _check_theta(skel, theta)
    beta = np.asarray(beta, dtype=np.float64)
    return kernels.fk_jacobian(skel.parents, skel.shaped_offsets(beta), theta, skel.shape_basis, True)


def project(joints3d, cam: CameraParams, regressor=None) -> np.ndarray:
    """Weak-perspective projection ``s * drop_z(regressor @ joints) + t``."""
    joints3d = np.asarray(joints3d, dtype=np.float64)
    pts = joints3d if regressor is None else np.asarray(regressor) @ joints3d
    return cam.s * pts[:, :2] + np.asarray(cam.t)


def render_keypoints(skel: SkeletonDef, theta, beta, cam: CameraParams) -> np.ndarray:
    return project(forward_kinematics(skel, theta, beta), cam, skel.keypoint_regressor)


# -- differentiable versions --------------------------------------------------


def fk_tensor(skel: SkeletonDef, theta, beta) -> ad.Tensor:
    """Forward kinematics as a single tape primitive with an analytic backward."""
    theta, beta = ad.as_tensor(theta), ad.as_tensor(beta)
    joints, jt, jb = fk_with_jacobian(skel, theta.data, beta.data)

    def vjp(g):
        g = g.reshape(-1)
        n = skel.n_joints
        return (
            g @ jt.reshape(3 * n, -1) if theta.requires_grad else None,
            g @ jb.reshape(3 * n, -1) if beta.requires_grad else None,
        )

    return ad.record("forward_kinematics", (theta, beta), joints, vjp)


def project_tensor(joints3d, s, t, regressor) -> ad.Tensor:
    """Differentiable weak-perspective projection; ``s`` scalar, ``t`` 2-vector."""
    pts = ad.matmul(np.asarray(regressor), joints3d)
    return ad.add(ad.mul(s, ad.slice(pts, (slice(None), slice(0, 2)))), t)
