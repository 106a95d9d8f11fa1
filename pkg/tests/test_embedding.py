import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sportmotion.embedding import (
    EmbeddingSpace,
    components_for_variance,
    cumulative_variance,
    decode,
    encode,
    fit_space,
    load_space,
    load_spaces,
    prior_weights,
    save_space,
    std_pose,
)


def jacobi_eigenvalues(a, sweeps=50):
    """Cyclic Jacobi rotations, descending eigenvalues."""
    a = np.array(a, dtype=float)
    n = len(a)
    for _ in range(sweeps):
        off = np.sqrt((a ** 2).sum() - (np.diag(a) ** 2).sum())
        if off < 1e-14:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2 * a[p, q])
                t = np.sign(tau) / (abs(tau) + np.sqrt(1 + tau * tau)) if tau != 0 else 1.0
                c = 1 / np.sqrt(1 + t * t)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q], J[q, p] = s, -s
                a = J.T @ a @ J
    return np.sort(np.diag(a))[::-1]


def correlated(rng, n=200, d=12, rank=None):
    scales = np.linspace(3, 0.1, d)
    x = rng.normal(size=(n, d)) * scales
    mix = np.linalg.qr(rng.normal(size=(d, d)))[0]
    x = x @ mix
    if rank is not None:
        u, s, vt = np.linalg.svd(x - x.mean(0), full_matrices=False)
        x = (u[:, :rank] * s[:rank]) @ vt[:rank] + x.mean(0)
    return x + rng.normal(size=d)


def test_eigenvalues_match_jacobi(rng):
    x = correlated(rng, d=8)
    space = fit_space(x, K=8)
    cov = np.cov(x.T, bias=True)
    np.testing.assert_allclose(space.eigenvalues, jacobi_eigenvalues(cov), atol=1e-10)
    assert space.total_variance == pytest.approx(np.trace(cov))


def test_bases_orthonormal_and_descending(rng):
    space = fit_space(correlated(rng), K=6)
    np.testing.assert_allclose(space.bases @ space.bases.T, np.eye(6), atol=1e-12)
    assert (np.diff(space.eigenvalues) <= 0).all()


def test_sign_convention(rng):
    space = fit_space(correlated(rng), K=5)
    for b in space.bases:
        assert b[np.argmax(np.abs(b))] > 0


def test_eckart_young(rng):
    x = correlated(rng)
    K = 4
    space = fit_space(x, K=K)
    recon = decode(space, encode(space, x))
    err = ((x - recon) ** 2).sum(1).mean()
    full = fit_space(x, K=x.shape[1])
    np.testing.assert_allclose(err, full.eigenvalues[K:].sum(), rtol=1e-9)
    for _ in range(20):
        q = np.linalg.qr(rng.normal(size=(x.shape[1], K)))[0]
        c = x - space.mean
        other = ((c - c @ q @ q.T) ** 2).sum(1).mean()
        assert other >= err - 1e-12


def test_rank_one_data(rng):
    direction = rng.normal(size=10)
    direction /= np.linalg.norm(direction)
    x = rng.normal(size=(50, 1)) * direction + 2.0
    space = fit_space(x, K=3)
    assert abs(abs(space.bases[0] @ direction) - 1) < 1e-12
    assert np.abs(space.eigenvalues[1:]).max() < 1e-12
    assert cumulative_variance(space)[0] == pytest.approx(1.0)


def test_rank_deficient_exact_reconstruction(rng):
    x = correlated(rng, d=12, rank=5)
    space = fit_space(x, K=5)
    np.testing.assert_allclose(decode(space, encode(space, x)), x, atol=1e-10)


def test_duplicated_samples_identical(rng):
    x = correlated(rng, n=40)
    a = fit_space(x, K=5)
    b = fit_space(np.concatenate([x, x]), K=5)
    c = fit_space(x[rng.permutation(len(x))], K=5)
    for s in (b, c):
        assert s.bases.tobytes() == a.bases.tobytes()
        assert s.eigenvalues.tobytes() == a.eigenvalues.tobytes()
        assert s.mean.tobytes() == a.mean.tobytes()


def test_fit_input_errors(rng):
    with pytest.raises(ValueError, match="K\\+1"):
        fit_space(rng.normal(size=(5, 10)), K=5)
    with pytest.raises(ValueError):
        fit_space(rng.normal(size=(50, 10)), K=11)
    with pytest.raises(ValueError):
        fit_space(rng.normal(size=50), K=1)


def test_encode_decode_shapes(rng):
    space = fit_space(correlated(rng), K=4)
    alpha = encode(space, space.mean)
    np.testing.assert_allclose(alpha, 0, atol=1e-14)
    with pytest.raises(ValueError):
        encode(space, np.zeros(11))
    with pytest.raises(ValueError):
        decode(space, np.zeros(5))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_decode_then_encode_is_identity(alpha):
    space = fit_space(correlated(np.random.default_rng(5)), K=4)
    np.testing.assert_allclose(encode(space, decode(space, alpha)), alpha, atol=1e-10)


def test_std_pose(rng):
    space = fit_space(correlated(rng), K=4)
    pose = std_pose(space, 1, 2.0)
    np.testing.assert_allclose(encode(space, pose), [0, 2 * np.sqrt(space.eigenvalues[1]), 0, 0], atol=1e-12)


def test_cumulative_variance_and_components(rng):
    space = fit_space(correlated(rng), K=12)
    c = cumulative_variance(space)
    assert (np.diff(c) >= 0).all() and c[-1] == pytest.approx(1.0)
    k = components_for_variance(space, 0.9)
    assert c[k - 1] >= 0.9 and (k == 1 or c[k - 2] < 0.9)
    small = fit_space(correlated(rng), K=1)
    assert components_for_variance(small, 0.999999) == 2


def test_prior_weights(rng):
    space = fit_space(correlated(rng), K=6)
    w = prior_weights(space)
    assert w[0] == 1.0
    np.testing.assert_allclose(w, np.sqrt(space.eigenvalues[0] / space.eigenvalues))
    flat = fit_space(rng.normal(size=(30, 1)) * np.ones(6), K=3)
    assert prior_weights(flat)[-1] == pytest.approx(np.sqrt(1e8))


def test_save_load_bitwise(rng, tmp_path):
    space = fit_space(correlated(rng), K=5, submotion="twist")
    save_space(space, tmp_path / "twist.json")
    back = load_space(tmp_path / "twist.json")
    assert back.submotion == "twist"
    for name in ("mean", "bases", "eigenvalues"):
        assert getattr(back, name).tobytes() == getattr(space, name).tobytes()
    assert back.total_variance == space.total_variance


def test_load_spaces_sorted(rng, tmp_path):
    for name in ("b", "a"):
        save_space(fit_space(correlated(rng), K=3, submotion=name), tmp_path / f"{name}.json")
    assert [s.submotion for s in load_spaces(tmp_path)] == ["a", "b"]
    with pytest.raises(FileNotFoundError):
        load_spaces(tmp_path / "missing")


def test_space_validation():
    with pytest.raises(ValueError):
        EmbeddingSpace("x", np.zeros(3), np.eye(3)[:2], np.ones(3), 1.0)
    with pytest.raises(ValueError):
        EmbeddingSpace.from_json({"submotion": "x", "K": 2, "mean": [0, 0], "bases": [[1, 0], [0, 1]], "eigenvalues": [1]})


def test_fitted_synthetic_spaces(diving_small):
    for space in diving_small.spaces:
        assert space.K == 25 and space.dim == 72
        assert np.isfinite(space.bases).all()
