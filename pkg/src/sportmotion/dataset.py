"""Turn clips and per-frame states into ST-GCN stream inputs."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .action_parse import AttributeSchema, ParseDataset
from .capture import VISIBLE, CaptureState
from .clips import PARSE_FRAMES, resample_clip, resample_coefficients
from .formats import AnnotatedClip, state_from_json
from .kinematics import NECK_KEYPOINT, PELVIS_KEYPOINT
from .stgcn import StreamInput, bone_pairs, bone_vectors, keypoint_graph


def normalize_joints(clip: AnnotatedClip) -> np.ndarray:
    """Keypoints centered on the mean mid-hip and divided by the median torso length.

    Keypoints that are not visible are zeroed.
    """
    kp, vis = clip.keypoints, clip.visibility == VISIBLE
    both = vis[:, PELVIS_KEYPOINT] & vis[:, NECK_KEYPOINT]
    if both.any():
        center = kp[both, PELVIS_KEYPOINT].mean(axis=0)
        torso = np.median(np.linalg.norm(kp[both, NECK_KEYPOINT] - kp[both, PELVIS_KEYPOINT], axis=1))
    elif vis.any():
        center, torso = kp[vis].mean(axis=0), 0.0
    else:
        center, torso = np.zeros(2), 0.0
    if torso <= 0:
        torso = 1.0
    out = (kp - center) / torso
    return np.where(vis[..., None], out, 0.0)


def coefficient_channels(states: Sequence, submotions: Sequence[str]) -> tuple[np.ndarray, list]:
    """Stacked ``alpha`` rows and sub-motion labels from states or state dicts."""
    states = [state_from_json(s) if isinstance(s, dict) else s for s in states]
    labels = [s.submotion for s in states]
    alpha = np.stack([s.alpha for s in states])
    return alpha, labels


def clip_stream_input(
    clip: AnnotatedClip,
    states: Sequence[CaptureState | dict] | None,
    submotions: Sequence[str],
    n_coeffs: int,
    frames: int = PARSE_FRAMES,
    pairs=None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(joints, bones, coeffs)`` arrays for one clip, resampled to ``frames``.

    Without states the coefficient block is zero and only the one-hot
    sub-motion channels (from the clip labels) are filled.
    """
    pairs = pairs if pairs is not None else bone_pairs(keypoint_graph())
    rc = resample_clip(clip, frames)
    joints = normalize_joints(rc)
    bones = bone_vectors(joints, pairs)
    subs = list(submotions)
    coeffs = np.zeros((frames, n_coeffs + len(subs)))
    if states is not None:
        alpha, labels = coefficient_channels(states, subs)
        if len(alpha) != len(clip):
            raise ValueError(f"{len(alpha)} states for a {len(clip)}-frame clip")
        alpha, labels = resample_coefficients(alpha, labels, frames)
        k = min(n_coeffs, alpha.shape[1])
        coeffs[:, :k] = alpha[:, :k]
    else:
        labels = rc.submotions
    for f, lab in enumerate(labels):
        if lab in subs:
            coeffs[f, n_coeffs + subs.index(lab)] = 1.0
    return joints, bones, coeffs


def build_dataset(
    clips: Sequence[AnnotatedClip],
    states: Sequence | None,
    schema: AttributeSchema,
    n_coeffs: int,
    frames: int = PARSE_FRAMES,
) -> ParseDataset:
    if not clips:
        raise ValueError("no clips")
    pairs = bone_pairs(keypoint_graph())
    rows = [
        clip_stream_input(c, None if states is None else states[i], schema.submotions, n_coeffs, frames, pairs)
        for i, c in enumerate(clips)
    ]
    inputs = StreamInput(*(np.stack(col) for col in zip(*rows)))
    return ParseDataset(inputs, np.array([c.sas for c in clips]), np.array([c.action for c in clips]))
