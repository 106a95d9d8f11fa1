"""Synthetic sport data: mocap, annotated keypoint clips and ground-truth states.

Every sub-motion owns a low-dimensional linear pose generator. A clip walks
through the sport's sub-motions in order; inside each segment the generator
coefficients follow smooth curves, and for diving the semantic attributes are
written into the leading coefficients:

* takeoff segment: z0 sits at a level set by the take-off class, z1 at +-1 by
  the arm-stand flag;
* somersault segment: z0 = A cos(pi n u) with n the somersault class, so the
  first coefficient changes sign exactly n times; z1 holds the position level;
* twist segment: z0 = A cos(pi k u) with k the twist class; z1 again holds the
  position level;
* entry segment: z0 ramps linearly.

Remaining coefficients drift smoothly. Leaf joints (feet, head, hands) stay
at rest because joint-position keypoints cannot observe their rotation.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .action_parse import AttributeSchema
from .capture import OCCLUDED, VISIBLE, CaptureState
from .embedding import DEFAULT_K, EmbeddingSpace, encode, fit_space
from .formats import AnnotatedClip, MocapSequence
from .kinematics import BETA_LIMIT, N_JOINTS, N_SHAPE, CameraParams, SkeletonDef, canonicalize_pose, render_keypoints

LEAF_JOINTS = (10, 11, 15, 22, 23)
AMPLITUDE = 1.5
DIVING_FRACTIONS = {"takeoff": 0.2, "somersault": 0.4, "twist": 0.2, "entry": 0.2}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose under a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass
class SynthConfig:
    seed: int = 0
    n_clips: int = 400
    frames: tuple = (96, 128)
    fps: float = 30.0
    latent_dim: int = 12
    latent_decay: float = 0.8
    latent_scale: float = 0.35
    mean_scale: float = 0.3
    K: int = DEFAULT_K
    detail: float = 0.3
    level_jitter: float = 0.05
    keypoint_noise: float = 0.0
    occlusion_rate: float = 0.0
    scale_range: tuple = (450.0, 650.0)
    center: tuple = (500.0, 500.0)

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        vals = {k: tuple(v) if isinstance(v, list) else v for k, v in obj.items()}
        return cls(**vals)


@dataclass(frozen=True)
class PoseGenerator:
    """``theta = mean + (std * z) @ basis`` for latent coefficients ``z``."""

    submotion: str
    mean: np.ndarray
    basis: np.ndarray   # (d, 72), orthonormal rows
    std: np.ndarray     # (d,)

    @property
    def dim(self) -> int:
        return len(self.std)

    def pose(self, z: np.ndarray) -> np.ndarray:
        return self.mean + (self.std * z) @ self.basis

    @classmethod
    def from_space(cls, space: EmbeddingSpace, dim: int) -> "PoseGenerator":
        d = min(dim, space.K)
        return cls(space.submotion, space.mean.copy(), space.bases[:d].copy(), np.sqrt(space.eigenvalues[:d]))


def random_generator(name: str, config: SynthConfig, rng: np.random.Generator) -> PoseGenerator:
    dim = 3 * N_JOINTS
    leaf = np.array([3 * j + c for j in LEAF_JOINTS for c in range(3)])
    g = rng.normal(size=(dim, dim))
    g[leaf] = 0.0
    q, _ = np.linalg.qr(g)
    mean = rng.normal(size=dim) * config.mean_scale
    mean[leaf] = 0.0
    std = config.latent_scale * config.latent_decay ** np.arange(config.latent_dim)
    return PoseGenerator(name, mean, q[:, : config.latent_dim].T.copy(), std)


@dataclass
class SynthData:
    schema: AttributeSchema
    mocap: list
    clips: list
    states: list        # per clip, per frame CaptureState
    spaces: list
    generators: list

    def space_for(self, label: str) -> EmbeddingSpace:
        for sp in self.spaces:
            if sp.submotion == label:
                return sp
        raise KeyError(label)


def _segment_lengths(n: int, fractions: np.ndarray) -> list[int]:
    edges = np.round(np.cumsum(fractions) / fractions.sum() * n).astype(int)
    edges[-1] = n
    lengths = np.diff(np.concatenate([[0], edges]))
    if (lengths < 2).any():
        raise ValueError(f"clip of {n} frames too short for {len(fractions)} segments")
    return lengths.tolist()


def _level(cls: int, n_classes: int) -> float:
    return -AMPLITUDE + 2 * AMPLITUDE * cls / (n_classes - 1)


def _detail(u: np.ndarray, n: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    freq = rng.uniform(0.3, 1.5, size=n)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    amp = rng.uniform(0, scale, size=n)
    offset = rng.normal(0, scale, size=n)
    return offset + amp * np.sin(2 * np.pi * freq * u[:, None] + phase)


def segment_latent(
    submotion: str, length: int, dim: int, sas: dict, config: SynthConfig, rng: np.random.Generator
) -> np.ndarray:
    """Latent trajectory ``(length, dim)`` for one segment."""
    u = (np.arange(length) + 0.5) / length
    z = _detail(u, dim, config.detail, rng)
    jit = lambda: rng.normal(0, config.level_jitter)  # noqa: E731
    if submotion == "takeoff" and "takeoff" in sas:
        z[:, 0] = _level(*sas["takeoff"]) + jit()
        if "armstand" in sas and dim > 1:
            z[:, 1] = (1.0 if sas["armstand"][0] else -1.0) + jit()
    elif submotion in ("somersault", "twist") and submotion in sas:
        z[:, 0] = AMPLITUDE * np.cos(np.pi * sas[submotion][0] * u)
        if "position" in sas and dim > 1:
            z[:, 1] = _level(*sas["position"]) + jit()
    elif submotion == "entry":
        z[:, 0] = np.linspace(-1.0, 1.0, length)
    elif not sas:
        # no attribute encoding: every coefficient is a slow random curve
        z = _detail(u, dim, 1.0, rng)
    return z


def _render_clip(
    skel: SkeletonDef, thetas: np.ndarray, beta: np.ndarray, cams: list, config: SynthConfig, rng: np.random.Generator
):
    kp = np.stack([render_keypoints(skel, th, beta, cam) for th, cam in zip(thetas, cams)])
    if config.keypoint_noise > 0:
        kp = kp + rng.normal(0, config.keypoint_noise, size=kp.shape)
    vis = np.full(kp.shape[:2], VISIBLE, dtype=np.int64)
    if config.occlusion_rate > 0:
        vis[rng.random(vis.shape) < config.occlusion_rate] = OCCLUDED
    return kp, vis


def generate(
    schema: AttributeSchema,
    skel: SkeletonDef,
    spaces: list | None = None,
    config: SynthConfig | None = None,
) -> SynthData:
    """Generate mocap, clips and ground-truth states, deterministic per seed.

    With ``spaces`` the poses are drawn inside those spaces (leading
    components); otherwise per-sub-motion generators are drawn at random and
    K-dimensional spaces are fitted to the generated mocap.
    """
    config = config or SynthConfig()
    subs = list(schema.submotions)
    if not subs:
        raise ValueError("schema lists no sub-motions")
    if spaces is not None:
        by_name = {sp.submotion: sp for sp in spaces}
        missing = [s for s in subs if s not in by_name]
        if missing:
            raise ValueError(f"no embedding space for sub-motions {missing}")
        gens = [PoseGenerator.from_space(by_name[s], config.latent_dim) for s in subs]
    else:
        gens = [random_generator(s, config, rng_stream(config.seed, f"generator/{s}")) for s in subs]
    gen_of = dict(zip(subs, gens))

    fractions = np.array([DIVING_FRACTIONS.get(s, 1.0 / len(subs)) for s in subs])
    pick = rng_stream(config.seed, "combinations")
    combo_idx = pick.integers(len(schema.combinations), size=config.n_clips)

    mocap, clips, cams_all, betas = [], [], [], []
    for i in range(config.n_clips):
        rng = rng_stream(config.seed, f"clip/{i}")
        sas_tuple, action = schema.combinations[combo_idx[i]]
        sas = {name: (v, c) for (name, c), v in zip(schema.attributes, sas_tuple)} if _encodes(schema) else {}
        n = int(rng.integers(config.frames[0], config.frames[1] + 1))
        frac = fractions * rng.uniform(0.85, 1.15, size=len(fractions))
        lengths = _segment_lengths(n, frac)
        thetas, labels, latents = [], [], []
        for sub, length in zip(subs, lengths):
            g = gen_of[sub]
            z = segment_latent(sub, length, g.dim, sas, config, rng)
            thetas.extend(canonicalize_pose(g.pose(row)) for row in z)
            labels.extend([sub] * length)
            latents.append(z)
        thetas = np.array(thetas)
        beta = np.clip(rng.normal(size=N_SHAPE), -BETA_LIMIT, BETA_LIMIT)
        s = rng.uniform(*config.scale_range)
        t0 = np.asarray(config.center) + rng.normal(0, 20, size=2)
        drift = rng.normal(0, 0.5, size=2)
        cams = [CameraParams(s, tuple(t0 + drift * f)) for f in range(n)]
        kp, vis = _render_clip(skel, thetas, beta, cams, config, rng_stream(config.seed, f"noise/{i}"))
        score = float(rng.uniform(20.0, 95.0))
        mocap.append(MocapSequence(schema.sport, config.fps, labels, thetas, np.tile(beta, (n, 1)),
                                   np.concatenate([np.pad(z, ((0, 0), (0, max(0, _max_dim(gens) - z.shape[1]))))
                                                   for z in latents])))
        clips.append(AnnotatedClip(kp, vis, labels, list(sas_tuple), action, score))
        cams_all.append(cams)
        betas.append(beta)

    if spaces is None:
        spaces = []
        for s in subs:
            poses = np.concatenate([m.theta[np.array(m.submotions) == s] for m in mocap])
            spaces.append(fit_space(poses, config.K, s))
    space_of = {sp.submotion: sp for sp in spaces}
    states = []
    for m, cams, beta in zip(mocap, cams_all, betas):
        states.append([
            CaptureState(encode(space_of[lab], th), beta, cam.s, cam.t, lab)
            for th, lab, cam in zip(m.theta, m.submotions, cams)
        ])
    return SynthData(schema, mocap, clips, states, list(spaces), gens)


def _max_dim(gens) -> int:
    return max(g.dim for g in gens)


def _encodes(schema: AttributeSchema) -> bool:
    return schema.sport == "diving"


def two_cluster_schema(submotions=("a", "b")) -> AttributeSchema:
    """Minimal schema for generic sports with no attribute-driven motion."""
    return AttributeSchema(
        attributes=(("style", 2),),
        action_labels=2,
        combinations=(((0,), 0), ((1,), 1)),
        sport="toy",
        submotions=tuple(submotions),
    )


@dataclass
class Split:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)


def split_indices(n: int, fractions=(0.8, 0.2, 0.0), seed: int = 0) -> Split:
    """Shuffled train/val/test index lists."""
    order = rng_stream(seed, "split").permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return Split(sorted(order[:n_train].tolist()), sorted(order[n_train:n_train + n_val].tolist()),
                 sorted(order[n_train + n_val:].tolist()))
