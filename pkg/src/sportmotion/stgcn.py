"""Multi-stream spatial-temporal graph convolution.

Layout throughout is ``(N, T, V, C)``: batch, frames, graph nodes, channels.
Three streams are supported: joint coordinates (J), bone vectors (B) and pose
coefficients (P). J and B run a stack of graph-convolution layers on the
keypoint graph and on its bone graph; P runs residual 1-D convolutions over
time. Each stream is average-pooled to one feature vector and the vectors are
concatenated in J, B, P order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .kinematics import KEYPOINT_EDGES, N_KEYPOINTS, NECK_KEYPOINT, PELVIS_KEYPOINT

ROOT, CENTRIPETAL, CENTRIFUGAL = 0, 1, 2
N_FRAMES = 90
STREAMS = ("j", "b", "p")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonGraph:
    n_nodes: int
    edges: tuple
    center: int

    def __post_init__(self):
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        n = self.n_nodes
        if not 0 <= self.center < n:
            raise GraphError(f"center {self.center} out of range for {n} nodes")
        for a, b in edges:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise GraphError(f"bad edge ({a}, {b})")
        if len(set(frozenset(e) for e in edges)) != len(edges):
            raise GraphError("duplicate edge")
        if len(edges) != n - 1:
            raise GraphError(f"a tree on {n} nodes has {n - 1} edges, got {len(edges)}")
        if np.isinf(self.hop_distances()).any():
            raise GraphError("graph is disconnected")

    def neighbors(self) -> list[list[int]]:
        nb: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for a, b in self.edges:
            nb[a].append(b)
            nb[b].append(a)
        return nb

    def hop_distances(self) -> np.ndarray:
        dist = np.full(self.n_nodes, np.inf)
        dist[self.center] = 0
        queue = deque([self.center])
        nb = self.neighbors()
        while queue:
            i = queue.popleft()
            for j in nb[i]:
                if np.isinf(dist[j]):
                    dist[j] = dist[i] + 1
                    queue.append(j)
        return dist

    def parents(self) -> np.ndarray:
        """Parent of each node when the tree is rooted at the center (-1 for the center)."""
        dist = self.hop_distances()
        par = np.full(self.n_nodes, -1, dtype=np.int64)
        for a, b in self.edges:
            if dist[a] < dist[b]:
                par[b] = a
            else:
                par[a] = b
        return par


def keypoint_graph() -> SkeletonGraph:
    return SkeletonGraph(N_KEYPOINTS, tuple(KEYPOINT_EDGES), PELVIS_KEYPOINT)


def bone_pairs(graph: SkeletonGraph) -> list[tuple[int, int]]:
    """``(parent, child)`` joint pairs, one bone per non-center node, in edge order."""
    par = graph.parents()
    pairs = []
    for a, b in graph.edges:
        child = b if par[b] == a else a
        pairs.append((int(par[child]), int(child)))
    return pairs


def bone_graph(graph: SkeletonGraph, spine_child: int = NECK_KEYPOINT) -> SkeletonGraph:
    """Graph whose nodes are bones.

    A bone's parent is the bone ending at its parent joint. Bones leaving the
    center joint hang off the bone that ends at ``spine_child``, which is the
    bone graph's center.
    """
    pairs = bone_pairs(graph)
    ending_at = {child: i for i, (_, child) in enumerate(pairs)}
    if spine_child not in ending_at or pairs[ending_at[spine_child]][0] != graph.center:
        raise GraphError(f"joint {spine_child} is not attached to the center joint")
    spine = ending_at[spine_child]
    edges = []
    for i, (p, _) in enumerate(pairs):
        if i == spine:
            continue
        edges.append((ending_at[p] if p != graph.center else spine, i))
    return SkeletonGraph(len(pairs), tuple(edges), spine)


def build_partitioned_adjacency(graph: SkeletonGraph) -> np.ndarray:
    """Row-normalized root / centripetal / centrifugal adjacency, shape ``(3, V, V)``.

    Neighbor ``j`` of node ``i`` is centripetal when it is closer to the center
    than ``i`` and centrifugal when farther; ``i`` itself is root.
    """
    dist = graph.hop_distances()
    n = graph.n_nodes
    A = np.zeros((3, n, n))
    A[ROOT] = np.eye(n)
    for i, nbs in enumerate(graph.neighbors()):
        for j in nbs:
            if dist[j] < dist[i]:
                A[CENTRIPETAL, i, j] = 1.0
            elif dist[j] > dist[i]:
                A[CENTRIFUGAL, i, j] = 1.0
            else:  # equal hop distance cannot happen on a tree
                raise GraphError(f"nodes {i} and {j} are equidistant from the center")
    deg = A.sum(axis=2, keepdims=True)
    return np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)


# -- configuration and parameters ---------------------------------------------


@dataclass(frozen=True)
class StgcnConfig:
    channels: tuple = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
    strides: tuple = (1, 1, 1, 1, 2, 1, 1, 2, 1, 1)
    kernel: int = 9
    p_channels: tuple = (64, 128, 256, 256)
    p_kernel: int = 9
    frames: int = N_FRAMES

    def __post_init__(self):
        if len(self.channels) != len(self.strides):
            raise ValueError("channels and strides must have equal length")
        if self.p_channels and self.p_channels[-1] != self.channels[-1]:
            raise ValueError("J/B and P streams must end with the same feature width")

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    @classmethod
    def scaled(cls, width: float, **kw) -> "StgcnConfig":
        """Default layer schedule with every channel count multiplied by ``width``."""
        base = cls()
        c = tuple(max(1, round(x * width)) for x in base.channels)
        p = tuple(max(1, round(x * width)) for x in base.p_channels)
        return cls(channels=c, p_channels=p, **kw)


def _he(rng, shape, fan_in):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_graph_stream(prefix: str, c_in: int, n_nodes: int, cfg: StgcnConfig, rng, n_parts: int = 3) -> dict:
    params = {}
    for li, (c_out, stride) in enumerate(zip(cfg.channels, cfg.strides)):
        p = f"{prefix}.l{li}."
        params[p + "E"] = np.zeros((n_parts, n_nodes, n_nodes))
        params[p + "W"] = _he(rng, (n_parts, c_in, c_out), n_parts * c_in)
        params[p + "bs"] = np.zeros(c_out)
        params[p + "Wt"] = _he(rng, (cfg.kernel, c_out, c_out), cfg.kernel * c_out)
        params[p + "bt"] = np.zeros(c_out)
        if c_in != c_out or stride != 1:
            params[p + "Wr"] = rng.normal(0.0, np.sqrt(1.0 / c_in), size=(1, c_in, c_out))
            params[p + "br"] = np.zeros(c_out)
        c_in = c_out
    return params


def init_p_stream(prefix: str, c_in: int, cfg: StgcnConfig, rng) -> dict:
    params = {}
    for bi, c_out in enumerate(cfg.p_channels):
        p = f"{prefix}.b{bi}."
        params[p + "W"] = _he(rng, (cfg.p_kernel, c_in, c_out), cfg.p_kernel * c_in)
        params[p + "b"] = np.zeros(c_out)
        if c_in != c_out:
            params[p + "Wr"] = rng.normal(0.0, np.sqrt(1.0 / c_in), size=(1, c_in, c_out))
        c_in = c_out
    return params


# -- forward ------------------------------------------------------------------


def _get(params: Mapping, key: str):
    return params[key] if key in params else None


def stgcn_layer(x, A: np.ndarray, params: Mapping, prefix: str = "", stride: int = 1) -> ad.Tensor:
    """One spatial-temporal block.

    ``y = sum_p (A_p + E_p) x W_p + b_s``, then a same-padded temporal
    convolution, a residual (identity, or 1x1 projection when the shape
    changes) and a relu. ``A`` is ``(P, V, V)``; params are looked up as
    ``prefix + {"E", "W", "bs", "Wt", "bt", "Wr", "br"}``.
    """
    x = ad.as_tensor(x)
    E, W = params[prefix + "E"], params[prefix + "W"]
    n_parts = A.shape[0]
    if x.ndim != 4 or x.shape[2] != A.shape[1]:
        raise ad.ShapeError(f"stgcn_layer: input {x.shape} does not match adjacency {A.shape}")
    N, T, V, C = x.shape
    c_out = ad.as_tensor(W).shape[2]
    # all partitions in two GEMMs: x @ [W_1 .. W_P], then [A_1 + E_1 .. A_P + E_P] @ (.)
    w_cat = ad.reshape(ad.transpose(W, (1, 0, 2)), (C, n_parts * c_out))
    xw = ad.reshape(ad.matmul(x, w_cat), (N, T, V * n_parts, c_out))
    adj = ad.reshape(ad.transpose(ad.add(A, E), (1, 2, 0)), (V, V * n_parts))
    y = ad.add(ad.matmul(adj, xw), params[prefix + "bs"])
    h = ad.add(ad.conv_temporal(y, params[prefix + "Wt"], stride), params[prefix + "bt"])
    Wr = _get(params, prefix + "Wr")
    if Wr is None:
        if stride != 1 or ad.as_tensor(W).shape[1] != ad.as_tensor(W).shape[2]:
            raise ad.ShapeError(f"{prefix}: shape change needs a residual projection")
        res = x
    else:
        res = ad.add(ad.conv_temporal(x, Wr, stride), params[prefix + "br"])
    return ad.relu(ad.add(h, res))


def graph_stream(x, A: np.ndarray, params: Mapping, prefix: str, cfg: StgcnConfig) -> ad.Tensor:
    h = ad.as_tensor(x)
    for li, stride in enumerate(cfg.strides):
        h = stgcn_layer(h, A, params, f"{prefix}.l{li}.", stride)
    return ad.mean(h, axis=(1, 2))


def p_block(x, params: Mapping, prefix: str) -> ad.Tensor:
    """Residual temporal convolution block on ``(N, T, C)``."""
    h = ad.add(ad.conv_temporal(x, params[prefix + "W"]), params[prefix + "b"])
    Wr = _get(params, prefix + "Wr")
    res = x if Wr is None else ad.conv_temporal(x, Wr)
    return ad.relu(ad.add(h, res))


def p_stream(x, params: Mapping, prefix: str, cfg: StgcnConfig) -> ad.Tensor:
    h = ad.as_tensor(x)
    for bi in range(len(cfg.p_channels)):
        h = p_block(h, params, f"{prefix}.b{bi}.")
    return ad.mean(h, axis=1)


@dataclass(frozen=True)
class StreamInput:
    joints: np.ndarray  # (N, T, 25, 2)
    bones: np.ndarray   # (N, T, 24, 2)
    coeffs: np.ndarray  # (N, T, K + n_submotions)

    def __post_init__(self):
        for name, nd in (("joints", 4), ("bones", 4), ("coeffs", 3)):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim == nd - 1:
                arr = arr[None]
            if arr.ndim != nd:
                raise ValueError(f"{name} must have {nd} dimensions, got shape {arr.shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        n = {self.joints.shape[:2], self.bones.shape[:2], self.coeffs.shape[:2]}
        if len(n) != 1:
            raise ValueError(f"streams disagree on (batch, frames): {sorted(n)}")

    @property
    def frames(self) -> int:
        return self.joints.shape[1]

    def __len__(self) -> int:
        return self.joints.shape[0]

    def take(self, idx) -> "StreamInput":
        return StreamInput(self.joints[idx], self.bones[idx], self.coeffs[idx])


@dataclass
class MultiStreamGCN:
    """Holds the graphs, adjacency and layer schedule; parameters live outside."""

    coeff_channels: int
    config: StgcnConfig = field(default_factory=StgcnConfig)
    streams: tuple = STREAMS
    graph: SkeletonGraph = field(default_factory=keypoint_graph)

    def __post_init__(self):
        unknown = set(self.streams) - set(STREAMS)
        if unknown or not self.streams:
            raise ValueError(f"streams must be a non-empty subset of {STREAMS}, got {self.streams}")
        self.streams = tuple(s for s in STREAMS if s in self.streams)
        self.bgraph = bone_graph(self.graph)
        self.pairs = bone_pairs(self.graph)
        self.A_joint = build_partitioned_adjacency(self.graph)
        self.A_bone = build_partitioned_adjacency(self.bgraph)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim * len(self.streams)

    def init_params(self, rng: np.random.Generator) -> dict:
        params = {}
        if "j" in self.streams:
            params.update(init_graph_stream("j", 2, self.graph.n_nodes, self.config, rng))
        if "b" in self.streams:
            params.update(init_graph_stream("b", 2, self.bgraph.n_nodes, self.config, rng))
        if "p" in self.streams:
            params.update(init_p_stream("p", self.coeff_channels, self.config, rng))
        return params

    def forward(self, inputs: StreamInput, params: Mapping) -> ad.Tensor:
        """Concatenated stream features, shape ``(N, feature_dim)``."""
        if inputs.frames != self.config.frames:
            raise ValueError(f"expected {self.config.frames} frames, got {inputs.frames}")
        feats = []
        if "j" in self.streams:
            feats.append(graph_stream(inputs.joints, self.A_joint, params, "j", self.config))
        if "b" in self.streams:
            feats.append(graph_stream(inputs.bones, self.A_bone, params, "b", self.config))
        if "p" in self.streams:
            if inputs.coeffs.shape[-1] != self.coeff_channels:
                raise ValueError(f"P-stream expects {self.coeff_channels} channels, got {inputs.coeffs.shape[-1]}")
            feats.append(p_stream(inputs.coeffs, params, "p", self.config))
        return feats[0] if len(feats) == 1 else ad.concat(feats, axis=-1)


def run_streams(inputs: StreamInput, params: Mapping, model: MultiStreamGCN) -> np.ndarray:
    return model.forward(inputs, params).numpy()


def bone_vectors(joints: np.ndarray, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    """``child - parent`` for each bone, over the last two axes ``(..., V, 2)``."""
    joints = np.asarray(joints)
    par = np.array([p for p, _ in pairs])
    child = np.array([c for _, c in pairs])
    return joints[..., child, :] - joints[..., par, :]


def param_shapes(params: Mapping) -> dict:
    return {k: tuple(np.shape(ad.as_tensor(v).data)) for k, v in params.items()}


def save_params(path, params: Mapping, meta: dict | None = None) -> None:
    checkpoint.save(path, {k: ad.as_tensor(v).data for k, v in params.items()}, meta)


def load_params(path, expected: Mapping | None = None):
    """Load a checkpoint; ``expected`` (a param dict) fixes every name and shape."""
    shapes = None if expected is None else param_shapes(expected)
    return checkpoint.load(path, shapes)
