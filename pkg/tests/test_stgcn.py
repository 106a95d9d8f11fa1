import numpy as np
import pytest

from sportmotion import autodiff as ad
from sportmotion.checkpoint import CheckpointError
from sportmotion.stgcn import (
    CENTRIFUGAL,
    CENTRIPETAL,
    ROOT,
    GraphError,
    MultiStreamGCN,
    SkeletonGraph,
    StgcnConfig,
    StreamInput,
    bone_graph,
    bone_pairs,
    bone_vectors,
    build_partitioned_adjacency,
    graph_stream,
    init_graph_stream,
    init_p_stream,
    keypoint_graph,
    load_params,
    p_block,
    p_stream,
    run_streams,
    save_params,
    stgcn_layer,
)

# a five-node tree keeps finite differences affordable
SMALL = SkeletonGraph(5, ((0, 1), (1, 2), (0, 3), (3, 4)), 0)
TINY = StgcnConfig(channels=(2, 2, 2, 2, 3, 3, 3, 4, 4, 4), kernel=3, p_channels=(3, 4), p_kernel=3, frames=8)


def with_param(params, key, value):
    out = dict(params)
    out[key] = value
    return out


# -- graph and partitions -------------------------------------------------------


def test_chain_partition_example():
    g = SkeletonGraph(3, ((0, 1), (1, 2)), 0)  # hip - knee - ankle
    A = build_partitioned_adjacency(g)
    assert A[CENTRIPETAL, 1, 0] == 1.0
    assert A[CENTRIFUGAL, 1, 2] == 1.0
    assert A[ROOT, 1, 1] == 1.0


def test_center_neighbors_are_centrifugal():
    g = keypoint_graph()
    A = build_partitioned_adjacency(g)
    for j in g.neighbors()[g.center]:
        assert A[CENTRIFUGAL, g.center, j] > 0
    assert not A[CENTRIPETAL, g.center].any()


@pytest.mark.parametrize("graph", [keypoint_graph(), bone_graph(keypoint_graph()), SMALL])
def test_partition_rows_and_cover(graph):
    A = build_partitioned_adjacency(graph)
    sums = A.sum(axis=2)
    assert np.isin(np.round(sums, 12), (0.0, 1.0)).all()
    adj = np.eye(graph.n_nodes)
    for a, b in graph.edges:
        adj[a, b] = adj[b, a] = 1.0
    np.testing.assert_array_equal((A > 0).sum(axis=0), adj)


def test_graph_validation():
    with pytest.raises(GraphError):
        SkeletonGraph(4, ((0, 1), (1, 2), (2, 0)), 0)  # cycle, node 3 unreachable
    with pytest.raises(GraphError):
        SkeletonGraph(3, ((0, 1),), 0)
    with pytest.raises(GraphError):
        SkeletonGraph(3, ((0, 1), (1, 1)), 0)
    with pytest.raises(GraphError):
        SkeletonGraph(3, ((0, 1), (1, 2)), 5)


def test_bone_graph_is_tree_over_24_bones():
    g = keypoint_graph()
    bg = bone_graph(g)
    assert bg.n_nodes == 24 == len(bone_pairs(g))
    assert np.isfinite(bg.hop_distances()).all()


def test_bone_vectors_child_minus_parent(rng):
    joints = rng.normal(size=(3, 25, 2))
    pairs = bone_pairs(keypoint_graph())
    bones = bone_vectors(joints, pairs)
    for i, (p, c) in enumerate(pairs):
        np.testing.assert_array_equal(bones[:, i], joints[:, c] - joints[:, p])


# -- layers ----------------------------------------------------------------------


def test_layer_identity_spatial_is_temporal_conv_only(rng):
    V, C = 5, 3
    params = {
        "E": np.zeros((1, V, V)),
        "W": np.eye(C)[None],
        "bs": np.zeros(C),
        "Wt": rng.normal(size=(3, C, C)),
        "bt": np.zeros(C),
    }
    x = rng.normal(size=(2, 7, V, C))
    out = stgcn_layer(x, np.eye(V)[None], params).data
    expected = np.maximum(ad.conv_temporal(x, params["Wt"]).data + x, 0.0)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_layer_node_permutation_equivariance(rng):
    A = build_partitioned_adjacency(SMALL)
    params = init_graph_stream("s", 3, 5, TINY, rng)
    lp = {k[len("s.l4."):]: v for k, v in params.items() if k.startswith("s.l4.")}
    lp["E"] = rng.normal(scale=0.1, size=lp["E"].shape)
    lp["W"] = rng.normal(size=(3, 3, 3))
    lp.pop("Wr"), lp.pop("br")
    x = rng.normal(size=(2, 8, 5, 3))
    perm = np.array([3, 0, 4, 1, 2])
    out = stgcn_layer(x, A, lp).data
    lp_perm = dict(lp, E=lp["E"][:, perm][:, :, perm])
    out_perm = stgcn_layer(x[:, :, perm], A[:, perm][:, :, perm], lp_perm).data
    np.testing.assert_allclose(out_perm, out[:, :, perm], atol=1e-12)


def test_layer_shape_errors(rng):
    params = init_graph_stream("s", 2, 5, TINY, rng)
    lp = {k[len("s.l0."):]: v for k, v in params.items() if k.startswith("s.l0.")}
    with pytest.raises(ad.ShapeError):
        stgcn_layer(rng.normal(size=(1, 8, 4, 2)), build_partitioned_adjacency(SMALL), lp)
    with pytest.raises(ad.ShapeError):
        stgcn_layer(rng.normal(size=(1, 8, 5, 2)), build_partitioned_adjacency(SMALL), lp, stride=2)


@pytest.mark.parametrize("layer", range(10))
def test_layer_gradients(layer, rng):
    """Every layer of the stack, with respect to its input and each parameter."""
    A = build_partitioned_adjacency(SMALL)
    params = init_graph_stream("s", 2, 5, TINY, rng)
    prefix = f"s.l{layer}."
    params[prefix + "E"] = rng.normal(scale=0.1, size=params[prefix + "E"].shape)
    c_in = 2 if layer == 0 else TINY.channels[layer - 1]
    x0 = rng.normal(size=(2, 6, 5, c_in))
    stride = TINY.strides[layer]
    weights = rng.normal(size=stgcn_layer(x0, A, params, prefix, stride).shape)

    def loss(x, p=params):
        return ad.sum(ad.mul(stgcn_layer(x, A, p, prefix, stride), weights))

    assert ad.check_gradient(loss, x0, tol=1e-4).passed
    for key in [k for k in params if k.startswith(prefix)]:
        report = ad.check_gradient(lambda v: loss(x0, with_param(params, key, v)), params[key], tol=1e-4)
        assert report.passed, f"{key}: {report}"


def test_graph_stream_gradient(rng):
    A = build_partitioned_adjacency(SMALL)
    params = init_graph_stream("s", 2, 5, TINY, rng)
    x0 = rng.normal(size=(2, 8, 5, 2))
    w = rng.normal(size=4)
    assert ad.check_gradient(lambda x: ad.sum(ad.mul(graph_stream(x, A, params, "s", TINY), w)), x0, tol=1e-4).passed


def test_p_stream_gradients(rng):
    params = init_p_stream("p", 5, TINY, rng)
    x0 = rng.normal(size=(2, 8, 5))
    w = rng.normal(size=4)

    def loss(x, p=params):
        return ad.sum(ad.mul(p_stream(x, p, "p", TINY), w))

    assert ad.check_gradient(loss, x0, tol=1e-4).passed
    for key in params:
        assert ad.check_gradient(lambda v: loss(x0, with_param(params, key, v)), params[key], tol=1e-4).passed


def test_p_block_identity_residual(rng):
    params = {"b.W": np.zeros((3, 4, 4)), "b.b": np.zeros(4)}
    x = rng.normal(size=(1, 6, 4))
    np.testing.assert_array_equal(p_block(x, params, "b.").data, np.maximum(x, 0))


# -- multi-stream model -----------------------------------------------------------


def small_inputs(rng, n=2, frames=8, k=6):
    return StreamInput(rng.normal(size=(n, frames, 25, 2)), rng.normal(size=(n, frames, 24, 2)), rng.normal(size=(n, frames, k)))


def test_default_feature_width():
    model = MultiStreamGCN(coeff_channels=30)
    assert model.feature_dim == 768
    params = model.init_params(np.random.default_rng(0))
    feats = run_streams(small_inputs(np.random.default_rng(1), n=1, frames=90, k=30), params, model)
    assert feats.shape == (1, 768) and np.isfinite(feats).all()


def test_streams_are_independent(rng):
    model = MultiStreamGCN(coeff_channels=6, config=TINY)
    params = model.init_params(np.random.default_rng(0))
    a = small_inputs(rng)
    base = run_streams(a, params, model)
    changed = run_streams(StreamInput(a.joints + 1.0, a.bones, a.coeffs), params, model)
    np.testing.assert_array_equal(changed[:, 4:], base[:, 4:])
    assert not np.allclose(changed[:, :4], base[:, :4])
    changed = run_streams(StreamInput(a.joints, a.bones, a.coeffs * 2.0), params, model)
    np.testing.assert_array_equal(changed[:, :8], base[:, :8])


def test_stream_subsets_and_order():
    model = MultiStreamGCN(coeff_channels=6, config=TINY, streams=("p", "j"))
    assert model.streams == ("j", "p") and model.feature_dim == 8
    assert not any(k.startswith("b.") for k in model.init_params(np.random.default_rng(0)))
    with pytest.raises(ValueError):
        MultiStreamGCN(coeff_channels=6, streams=("x",))


def test_forward_input_checks(rng):
    model = MultiStreamGCN(coeff_channels=6, config=TINY)
    params = model.init_params(rng)
    with pytest.raises(ValueError):
        model.forward(small_inputs(rng, frames=9), params)
    with pytest.raises(ValueError):
        model.forward(small_inputs(rng, k=5), params)
    with pytest.raises(ValueError):
        StreamInput(np.zeros((2, 8, 25, 2)), np.zeros((2, 7, 24, 2)), np.zeros((2, 8, 6)))


def test_batch_rows_are_independent(rng):
    model = MultiStreamGCN(coeff_channels=6, config=TINY)
    params = model.init_params(rng)
    inputs = small_inputs(rng, n=3)
    full = run_streams(inputs, params, model)
    np.testing.assert_allclose(run_streams(inputs.take([1]), params, model), full[1:2], atol=1e-12)


def test_init_is_seeded():
    model = MultiStreamGCN(coeff_channels=6, config=TINY)
    a = model.init_params(np.random.default_rng(3))
    b = model.init_params(np.random.default_rng(3))
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert all(not a[k].any() for k in a if k.endswith(".E"))


def test_scaled_config():
    cfg = StgcnConfig.scaled(1 / 16)
    assert cfg.channels[-1] == 16 and cfg.p_channels[-1] == 16
    with pytest.raises(ValueError):
        StgcnConfig(channels=(4, 4), strides=(1,))


# -- checkpoints ------------------------------------------------------------------


def test_checkpoint_round_trip_bitwise(tmp_path, rng):
    model = MultiStreamGCN(coeff_channels=6, config=TINY)
    params = model.init_params(rng)
    save_params(tmp_path / "a.ckpt", params, {"note": "x"})
    back, meta = load_params(tmp_path / "a.ckpt", params)
    assert meta == {"note": "x"}
    assert list(back) == list(params)
    assert all(back[k].tobytes() == params[k].tobytes() for k in params)
    save_params(tmp_path / "b.ckpt", back, {"note": "x"})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_shape_mismatch(tmp_path, rng):
    model = MultiStreamGCN(coeff_channels=6, config=TINY)
    params = model.init_params(rng)
    save_params(tmp_path / "a.ckpt", params)
    other = MultiStreamGCN(coeff_channels=7, config=TINY).init_params(rng)
    with pytest.raises(CheckpointError):
        load_params(tmp_path / "a.ckpt", other)
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_params(tmp_path / "bad.ckpt")
