import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sportmotion.capture import OCCLUDED, VISIBLE
from sportmotion.metrics import MetricError, average_ranks, pck, spearman, top1


def brute_ranks(x):
    return np.array([1 + sum(v < a for v in x) + (sum(v == a for v in x) - 1) / 2 for a in x])


def brute_spearman(x, y):
    rx, ry = brute_ranks(list(x)), brute_ranks(list(y))
    rx, ry = rx - rx.mean(), ry - ry.mean()
    return float((rx * ry).sum() / np.sqrt((rx * rx).sum() * (ry * ry).sum()))


def brute_pck(pred, gt, vis, thr):
    hits = total = 0
    for f in range(len(gt)):
        torso = np.hypot(*(gt[f, 1] - gt[f, 8]))
        if torso == 0:
            continue
        for k in range(gt.shape[1]):
            if vis[f, k] != VISIBLE:
                continue
            total += 1
            hits += np.hypot(*(pred[f, k] - gt[f, k])) <= thr * torso
    return 100.0 * hits / total


def frames(rng, n=6):
    gt = rng.normal(size=(n, 25, 2)) * 50 + 300
    gt[:, 8] = gt[:, 1] + rng.normal(size=(n, 2)) * 40  # torso with some length
    return gt


# -- PCK ----------------------------------------------------------------------------


def test_pck_perfect(rng):
    gt = frames(rng)
    assert pck(gt, gt) == 100.0


def test_pck_just_outside_threshold(rng):
    gt = frames(rng)
    torso = np.linalg.norm(gt[:, 1] - gt[:, 8], axis=-1)
    direction = rng.normal(size=(len(gt), 25, 2))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    pred = gt + direction * (1.01 * 0.5 * torso)[:, None, None]
    assert pck(pred, gt, threshold=0.5) == 0.0


def test_pck_matches_recount_oracle(rng):
    for _ in range(20):
        gt = frames(rng)
        pred = gt + rng.normal(size=gt.shape) * rng.uniform(5, 40)
        vis = rng.choice([0, OCCLUDED, VISIBLE], size=gt.shape[:2], p=[0.1, 0.1, 0.8])
        vis[:, 0] = VISIBLE
        for thr in (0.3, 0.5):
            assert pck(pred, gt, vis, thr) == brute_pck(pred, gt, vis, thr)


def test_pck_monotone_in_threshold(rng):
    gt = frames(rng)
    pred = gt + rng.normal(size=gt.shape) * 20
    values = [pck(pred, gt, threshold=t) for t in (0.1, 0.3, 0.5, 0.8)]
    assert values == sorted(values)


def test_pck_zero_torso_frame_skipped(rng, caplog):
    gt = frames(rng, n=2)
    gt[1, 8] = gt[1, 1]
    pred = gt.copy()
    pred[1] += 1000.0
    with caplog.at_level(logging.WARNING):
        assert pck(pred, gt) == 100.0
    assert "zero torso" in caplog.text


def test_pck_errors(rng):
    gt = frames(rng, n=1)
    with pytest.raises(MetricError):
        pck(gt, gt, np.zeros((1, 25)))
    with pytest.raises(MetricError):
        pck(gt[:, :24], gt)
    with pytest.raises(MetricError):
        pck(gt, gt, threshold=0.0)
    with pytest.raises(MetricError):
        pck(gt, gt, torso=(1, 1))


def test_pck_single_frame(rng):
    gt = frames(rng, n=1)[0]
    assert pck(gt, gt, np.full(25, VISIBLE)) == 100.0


# -- top-1 ----------------------------------------------------------------------------


def test_top1_examples(rng):
    assert top1(np.eye(4), np.arange(4)) == 100.0
    assert top1(np.full((5, 3), 1 / 3), np.zeros(5, int)) == 100.0
    pred = rng.random(size=(10, 4))
    gt = rng.integers(0, 4, 10)
    manual = sum(int(max(range(4), key=lambda c: (pred[i, c], -c)) == gt[i]) for i in range(10)) * 10.0
    assert top1(pred, gt) == manual


def test_top1_errors():
    with pytest.raises(MetricError):
        top1(np.zeros((0, 3)), [])
    with pytest.raises(MetricError):
        top1(np.eye(3), [0, 1])


# -- Spearman --------------------------------------------------------------------------


def test_spearman_extremes(rng):
    x = rng.normal(size=20)
    assert spearman(x, x) == 1.0
    assert spearman(x, -x) == -1.0


def test_spearman_oracle_1000_pairs(rng):
    worst = 0.0
    for i in range(1000):
        n = int(rng.integers(2, 30))
        x = rng.integers(0, 8, n).astype(float) if i % 2 else rng.normal(size=n)
        y = rng.permutation(x) if i % 3 == 0 else rng.normal(size=n)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        worst = max(worst, abs(spearman(x, y) - brute_spearman(x, y)))
    assert worst < 1e-12


def test_average_ranks_ties():
    np.testing.assert_array_equal(average_ranks([10, 20, 20, 5]), [2, 3.5, 3.5, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=20, unique=True))
def test_spearman_invariant_under_monotone_maps(x):
    # spaced inputs, so the maps stay strictly increasing after rounding
    x = np.array(x) / 10.0
    y = np.sin(x) + x / 7
    if np.ptp(y) == 0:
        return
    base = spearman(x, y)
    assert spearman(np.exp(x / 50), y) == pytest.approx(base, abs=1e-12)
    assert spearman(x, 3 * y + 1) == pytest.approx(base, abs=1e-12)


def test_spearman_order_independent(rng):
    x, y = rng.normal(size=15), rng.normal(size=15)
    p = rng.permutation(15)
    assert spearman(x[p], y[p]) == pytest.approx(spearman(x, y), abs=1e-14)


def test_spearman_errors():
    with pytest.raises(MetricError):
        spearman([1.0], [2.0])
    with pytest.raises(MetricError):
        spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(MetricError):
        spearman([1.0, np.nan], [1.0, 2.0])
    with pytest.raises(MetricError):
        spearman([1.0, 2.0], [1.0, 2.0, 3.0])
