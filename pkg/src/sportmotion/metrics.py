"""Evaluation metrics: PCK, top-1 accuracy and Spearman rank correlation."""

from __future__ import annotations

import logging

import numpy as np

from .capture import VISIBLE
from .kinematics import NECK_KEYPOINT, PELVIS_KEYPOINT

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


def pck(pred, gt, vis=None, threshold: float = 0.5, torso=(NECK_KEYPOINT, PELVIS_KEYPOINT)) -> float:
    """Percentage of visible keypoints within ``threshold`` torso lengths.

    ``pred`` and ``gt`` are ``(F, 25, 2)`` (or a single ``(25, 2)`` frame). The
    torso is measured per frame on ``gt`` between the two ``torso`` keypoints;
    frames where it is zero are skipped with a warning.
    """
    if threshold <= 0:
        raise MetricError("threshold must be positive")
    if torso[0] == torso[1]:
        raise MetricError("torso endpoints must differ")
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
        vis = None if vis is None else np.asarray(vis)[None]
    if pred.shape != gt.shape:
        raise MetricError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = np.ones(gt.shape[:2], bool) if vis is None else (np.asarray(vis) == VISIBLE)
    lengths = np.linalg.norm(gt[:, torso[0]] - gt[:, torso[1]], axis=-1)
    keep = lengths > 0
    if not keep.all():
        log.warning("skipping %d frame(s) with zero torso length", int((~keep).sum()))
    mask = mask & keep[:, None]
    total = int(mask.sum())
    if total == 0:
        raise MetricError("no visible keypoints to score")
    err = np.linalg.norm(pred - gt, axis=-1)
    hits = (err <= threshold * lengths[:, None]) & mask
    return 100.0 * hits.sum() / total


def top1(pred, gt) -> float:
    """Percent of rows whose argmax equals the label; ties pick the lowest index."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.ndim != 2 or len(pred) == 0:
        raise MetricError("top1 needs a non-empty (N, classes) array")
    if len(gt) != len(pred):
        raise MetricError("prediction and label counts differ")
    return 100.0 * float(np.mean(np.argmax(pred, axis=1) == gt))


def average_ranks(x) -> np.ndarray:
    """1-based ranks with tied values sharing their mean rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError("spearman needs two 1-D arrays of equal length")
    if len(x) < 2:
        raise MetricError("spearman needs at least two samples")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise MetricError("spearman inputs must be finite")
    rx = average_ranks(x) - (len(x) + 1) / 2.0
    ry = average_ranks(y) - (len(y) + 1) / 2.0
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0:
        raise MetricError("rank variance is zero; correlation undefined")
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))
