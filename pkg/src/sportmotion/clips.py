"""Clip resampling and geometric augmentation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .capture import VISIBLE
from .formats import AnnotatedClip
from .kinematics import KEYPOINT_FLIP

PARSE_FRAMES = 90


def _grid(n_in: int, n_out: int):
    x = np.arange(n_out) * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
    lo = np.minimum(np.floor(x).astype(int), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    w = x - lo
    nearest = np.minimum(np.floor(x + 0.5).astype(int), n_in - 1)
    return lo, hi, w, nearest


def resample_clip(clip: AnnotatedClip, target_frames: int = PARSE_FRAMES) -> AnnotatedClip:
    """Linear interpolation onto a uniform grid spanning the first and last frame.

    A resampled keypoint keeps the weaker visibility flag of its two
    bracketing frames (visible only if both are); labels come from the
    nearest frame.
    """
    n = len(clip)
    if n < 2:
        raise ValueError("cannot resample a single-frame clip")
    if target_frames < 2:
        raise ValueError("target_frames must be at least 2")
    if n == target_frames:
        return replace(clip, keypoints=clip.keypoints.copy(), visibility=clip.visibility.copy())
    lo, hi, w, nearest = _grid(n, target_frames)
    # a + w (b - a) is exact on grid points and for constant stretches
    kp = clip.keypoints[lo] + w[:, None, None] * (clip.keypoints[hi] - clip.keypoints[lo])
    exact = w == 0
    vis = np.where(exact[:, None], clip.visibility[lo], np.minimum(clip.visibility[lo], clip.visibility[hi]))
    labels = [clip.submotions[i] for i in nearest]
    return replace(clip, keypoints=kp, visibility=vis, submotions=labels)


def resample_coefficients(alpha: np.ndarray, labels, target_frames: int = PARSE_FRAMES) -> tuple[np.ndarray, list]:
    """Resample per-frame coefficients; interpolate only between frames of one sub-motion.

    Coefficients of different sub-motions live in different spaces, so across
    a sub-motion boundary the nearest frame is used instead.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    n = len(alpha)
    if n < 2:
        raise ValueError("cannot resample a single-frame sequence")
    labels = list(labels)
    lo, hi, w, nearest = _grid(n, target_frames)
    same = np.array([labels[a] == labels[b] for a, b in zip(lo, hi)])
    interp = alpha[lo] + w[:, None] * (alpha[hi] - alpha[lo])
    out = np.where(same[:, None], interp, alpha[nearest])
    return out, [labels[i] for i in nearest]


@dataclass(frozen=True)
class AugmentConfig:
    scale_range: tuple = (0.7, 1.3)
    rotation_deg: float = 45.0
    flip_prob: float = 0.5
    scale_coeffs: bool = True

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls((1.0, 1.0), 0.0, 0.0, False)


@dataclass(frozen=True)
class AugmentParams:
    scale: float = 1.0
    angle: float = 0.0  # radians
    flip: bool = False

    @classmethod
    def draw(cls, config: AugmentConfig, rng: np.random.Generator) -> "AugmentParams":
        scale = rng.uniform(*config.scale_range)
        angle = np.deg2rad(rng.uniform(-config.rotation_deg, config.rotation_deg))
        flip = bool(rng.random() < config.flip_prob)
        return cls(float(scale), float(angle), flip)


def clip_centroid(clip: AnnotatedClip) -> np.ndarray:
    vis = clip.visibility == VISIBLE
    if not vis.any():
        return np.zeros(2)
    return clip.keypoints[vis].mean(axis=0)


def apply_augment(clip: AnnotatedClip, params: AugmentParams, coeffs: np.ndarray | None = None):
    """Rotate, scale and optionally mirror about the clip centroid.

    The mirror negates x and swaps left/right keypoints so labels follow the
    data. Returns the new clip and the (scaled) coefficients.
    """
    if params == AugmentParams():
        out = replace(clip, keypoints=clip.keypoints.copy(), visibility=clip.visibility.copy())
        return out, (None if coeffs is None else np.array(coeffs, dtype=np.float64))
    c = clip_centroid(clip)
    cos, sin = np.cos(params.angle), np.sin(params.angle)
    rot = params.scale * np.array([[cos, -sin], [sin, cos]])
    rel = clip.keypoints - c
    vis = clip.visibility
    if params.flip:
        rel = rel[:, KEYPOINT_FLIP] * np.array([-1.0, 1.0])
        vis = vis[:, KEYPOINT_FLIP]
    kp = rel @ rot.T + c
    out = replace(clip, keypoints=kp, visibility=vis.copy())
    if coeffs is not None:
        coeffs = np.asarray(coeffs, dtype=np.float64) * params.scale
    return out, coeffs


def augment(clip: AnnotatedClip, config: AugmentConfig, rng: np.random.Generator, coeffs=None):
    params = AugmentParams.draw(config, rng)
    if not config.scale_coeffs:
        out, _ = apply_augment(clip, params)
        return out, (None if coeffs is None else np.asarray(coeffs, dtype=np.float64).copy())
    return apply_augment(clip, params, coeffs)


def flip(clip: AnnotatedClip) -> AnnotatedClip:
    return apply_augment(clip, AugmentParams(flip=True))[0]
