"""Per-sub-motion PCA pose spaces.

A pose vector is written as ``theta = alpha @ bases + mean``; the bases are the
top eigenvectors of the explicit pose covariance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_K = 25
EIGEN_CLAMP = 1e-8


@dataclass(frozen=True)
class EmbeddingSpace:
    submotion: str
    mean: np.ndarray         # (D,)
    bases: np.ndarray        # (K, D), orthonormal rows
    eigenvalues: np.ndarray  # (K,), descending
    total_variance: float

    def __post_init__(self):
        for name in ("mean", "bases", "eigenvalues"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        k, d = self.bases.shape
        if self.mean.shape != (d,) or self.eigenvalues.shape != (k,):
            raise ValueError("inconsistent embedding space shapes")
        if k > d:
            raise ValueError(f"K={k} exceeds pose dimension {d}")

    @property
    def K(self) -> int:
        return self.bases.shape[0]

    @property
    def dim(self) -> int:
        return self.bases.shape[1]

    def to_json(self) -> dict:
        return {
            "submotion": self.submotion,
            "K": self.K,
            "mean": self.mean.tolist(),
            "bases": self.bases.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "total_variance": self.total_variance,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EmbeddingSpace":
        k = int(obj["K"])
        bases = np.asarray(obj["bases"], dtype=np.float64).reshape(k, -1)
        eig = np.asarray(obj["eigenvalues"], dtype=np.float64)
        if len(eig) != k:
            raise ValueError(f"K={k} but {len(eig)} eigenvalues")
        total = float(obj.get("total_variance", eig.sum()))
        return cls(str(obj["submotion"]), np.asarray(obj["mean"], dtype=np.float64), bases, eig, total)


def save_space(space: EmbeddingSpace, path) -> None:
    # repr-exact floats, so load(save(x)) is bitwise identical
    Path(path).write_text(json.dumps(space.to_json()))


def load_space(path) -> EmbeddingSpace:
    with open(path) as fh:
        return EmbeddingSpace.from_json(json.load(fh))


def load_spaces(directory) -> list[EmbeddingSpace]:
    """All ``*.json`` spaces in a directory, sorted by file name."""
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise FileNotFoundError(f"no embedding spaces in {directory}")
    return [load_space(p) for p in paths]


def _weighted_moments(poses: np.ndarray):
    # Unique rows with multiplicity weights: duplicating the whole sample
    # set (or reordering it) leaves every floating-point operation unchanged.
    uniq, counts = np.unique(poses, axis=0, return_counts=True)
    w = counts / counts.sum()
    mean = w @ uniq
    centered = uniq - mean
    cov = (centered * w[:, None]).T @ centered
    return mean, 0.5 * (cov + cov.T)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), idx])
    signs[signs == 0] = 1.0
    return vecs * signs[:, None]


def fit_space(poses, K: int = DEFAULT_K, submotion: str = "all") -> EmbeddingSpace:
    """PCA of pose vectors from the explicit (population) covariance matrix.

    Basis signs are fixed so each basis vector's largest-magnitude entry is
    positive.
    """
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim != 2:
        raise ValueError(f"poses must be a 2-D array, got shape {poses.shape}")
    n, d = poses.shape
    if K < 1 or K > d:
        raise ValueError(f"K={K} must be in [1, {d}]")
    if n < K + 1:
        raise ValueError(f"need at least K+1={K + 1} samples, got {n}")
    mean, cov = _weighted_moments(poses)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1]
    evals = np.clip(evals[order], 0.0, None)
    bases = _fix_signs(evecs[:, order].T[:K])
    return EmbeddingSpace(submotion, mean, bases, evals[:K], float(np.trace(cov)))


def encode(space: EmbeddingSpace, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != space.dim:
        raise ValueError(f"pose length {theta.shape[-1]} does not match space dimension {space.dim}")
    return (theta - space.mean) @ space.bases.T


def decode(space: EmbeddingSpace, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[-1] != space.K:
        raise ValueError(f"coefficient length {alpha.shape[-1]} does not match K={space.K}")
    return alpha @ space.bases + space.mean


def std_pose(space: EmbeddingSpace, component: int, n_std: float) -> np.ndarray:
    """Pose at ``n_std`` standard deviations along one principal component."""
    alpha = np.zeros(space.K)
    alpha[component] = n_std * np.sqrt(space.eigenvalues[component])
    return decode(space, alpha)


def cumulative_variance(space: EmbeddingSpace) -> np.ndarray:
    if space.total_variance <= 0:
        return np.ones(space.K)
    c = np.cumsum(space.eigenvalues) / space.total_variance
    return np.minimum(np.maximum.accumulate(c), 1.0)


def components_for_variance(space: EmbeddingSpace, level: float) -> int:
    """Smallest k whose cumulative variance ratio reaches ``level`` (K+1 if never)."""
    c = cumulative_variance(space)
    hit = np.flatnonzero(c >= level - 1e-15)
    return int(hit[0]) + 1 if hit.size else space.K + 1


def prior_weights(space: EmbeddingSpace) -> np.ndarray:
    """``sqrt(lambda_1 / lambda_k)`` with eigenvalues clamped at ``1e-8 * lambda_1``."""
    lam = space.eigenvalues
    top = lam[0]
    if top <= 0:
        return np.ones(space.K)
    return np.sqrt(top / np.maximum(lam, EIGEN_CLAMP * top))
