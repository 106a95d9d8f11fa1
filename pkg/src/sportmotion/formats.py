"""In-memory containers for mocap and annotated clips, and their JSON files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .capture import VISIBLE, CaptureState, ObservedFrame
from .kinematics import N_KEYPOINTS


class FormatError(ValueError):
    pass


@dataclass
class MocapSequence:
    sport: str
    fps: float
    submotions: list          # per-frame labels
    theta: np.ndarray         # (F, 72)
    beta: np.ndarray          # (F, 10)
    latent: np.ndarray | None = None  # generator coefficients, synthetic data only

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.submotions = list(self.submotions)
        if self.theta.ndim != 2 or len(self.theta) != len(self.submotions) or len(self.beta) != len(self.theta):
            raise FormatError("mocap theta, beta and labels disagree on frame count")

    def __len__(self) -> int:
        return len(self.theta)

    def to_json(self) -> dict:
        out = {
            "sport": self.sport,
            "fps": self.fps,
            "submotions": self.submotions,
            "frames": [{"theta": t.tolist(), "beta": b.tolist()} for t, b in zip(self.theta, self.beta)],
        }
        if self.latent is not None:
            out["latent"] = np.asarray(self.latent).tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MocapSequence":
        frames = obj["frames"]
        latent = obj.get("latent")
        return cls(
            obj.get("sport", ""),
            float(obj.get("fps", 30.0)),
            obj["submotions"],
            np.array([f["theta"] for f in frames], dtype=np.float64),
            np.array([f["beta"] for f in frames], dtype=np.float64),
            None if latent is None else np.asarray(latent, dtype=np.float64),
        )


@dataclass
class AnnotatedClip:
    keypoints: np.ndarray     # (F, 25, 2) pixels
    visibility: np.ndarray    # (F, 25) flags
    submotions: list          # per-frame labels
    sas: list = field(default_factory=list)
    action: int = -1
    score: float = float("nan")

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=np.int64)
        self.submotions = list(self.submotions)
        self.sas = [int(v) for v in self.sas]
        f = len(self.keypoints)
        if f < 1:
            raise FormatError("clip has no frames")
        if self.keypoints.shape[1:] != (N_KEYPOINTS, 2) or self.visibility.shape != (f, N_KEYPOINTS):
            raise FormatError(f"keypoints {self.keypoints.shape} / visibility {self.visibility.shape} malformed")
        if len(self.submotions) != f:
            raise FormatError(f"{len(self.submotions)} sub-motion labels for {f} frames")

    def __len__(self) -> int:
        return len(self.keypoints)

    def frames(self) -> list[ObservedFrame]:
        return [ObservedFrame(k, v) for k, v in zip(self.keypoints, self.visibility)]

    def to_json(self) -> dict:
        return {
            "frames": [{"keypoints": k.tolist(), "visibility": v.tolist()} for k, v in zip(self.keypoints, self.visibility)],
            "submotions": self.submotions,
            "sas": self.sas,
            "action": self.action,
            "score": None if np.isnan(self.score) else self.score,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AnnotatedClip":
        frames = obj["frames"]
        if not frames:
            raise FormatError("clip has no frames")
        vis = [f.get("visibility", [VISIBLE] * N_KEYPOINTS) for f in frames]
        score = obj.get("score")
        return cls(
            np.array([f["keypoints"] for f in frames], dtype=np.float64),
            np.array(vis, dtype=np.int64),
            obj.get("submotions") or [""] * len(frames),
            obj.get("sas", []),
            int(obj.get("action", -1)),
            float("nan") if score is None else float(score),
        )


def state_to_json(state: CaptureState) -> dict:
    return {"submotion": state.submotion, "alpha": state.alpha.tolist(), "beta": state.beta.tolist(),
            "s": state.s, "t": state.t.tolist()}


def state_from_json(obj: dict) -> CaptureState:
    return CaptureState(obj["alpha"], obj["beta"], obj["s"], obj["t"], obj.get("submotion", ""))


def _write(path, obj) -> None:
    Path(path).write_text(json.dumps(obj))


def _read(path):
    with open(path) as fh:
        return json.load(fh)


def save_mocap(path, seqs: Sequence[MocapSequence]) -> None:
    _write(path, {"sequences": [s.to_json() for s in seqs]})


def load_mocap(path) -> list[MocapSequence]:
    obj = _read(path)
    items = obj["sequences"] if isinstance(obj, dict) and "sequences" in obj else [obj]
    return [MocapSequence.from_json(o) for o in items]


def save_clips(path, clips: Sequence[AnnotatedClip]) -> None:
    _write(path, {"clips": [c.to_json() for c in clips]})


def load_clips(path) -> list[AnnotatedClip]:
    """Read a clip file holding either one clip object or ``{"clips": [...]}``."""
    obj = _read(path)
    items = obj["clips"] if isinstance(obj, dict) and "clips" in obj else [obj]
    return [AnnotatedClip.from_json(o) for o in items]


def save_states(path, states: Sequence[Sequence]) -> None:
    """Per-clip lists of per-frame states (CaptureState or capture output dicts)."""
    rows = [[state_to_json(s) if isinstance(s, CaptureState) else s for s in clip] for clip in states]
    _write(path, rows)


def load_states(path) -> list[list[dict]]:
    """Per-clip lists of per-frame dicts; a single capture output file is one clip."""
    obj = _read(path)
    if obj and isinstance(obj[0], dict):
        return [obj]
    return obj
