import logging
from dataclasses import replace

import numpy as np
import pytest

from sportmotion import autodiff as ad
from sportmotion.capture import (
    LAMBDA_DATA,
    LAMBDA_SMPL,
    OCCLUDED,
    UNLABELED,
    VISIBLE,
    CaptureError,
    CaptureState,
    FitConfig,
    ObservedFrame,
    UnderdeterminedFrame,
    capture_clip,
    combine_losses,
    fit_frame,
    initial_state,
    loss_data,
    loss_mem,
    loss_prior,
    loss_smpl,
    select_submotion,
)
from sportmotion.embedding import decode, prior_weights
from sportmotion.kinematics import CameraParams, render_keypoints


def render(state, space, skel):
    kp = render_keypoints(skel, decode(space, state.alpha), state.beta, CameraParams(state.s, tuple(state.t)))
    return ObservedFrame(kp, np.full(25, VISIBLE))


def rest_state(space, skel, s=500.0, t=(400.0, 300.0), beta=None):
    beta = np.zeros(skel.n_shape) if beta is None else beta
    return CaptureState(np.zeros(space.K), beta, s, np.array(t), space.submotion)


@pytest.fixture(scope="module")
def space(toy_small):
    return toy_small.spaces[0]


# -- losses ---------------------------------------------------------------------


def test_prior_zero_at_mean(space):
    assert float(loss_prior(space, np.zeros(space.K)).data) == 0.0


def test_prior_unit_coefficient_is_weight(space):
    w = prior_weights(space)
    for k in (0, 3, 7):
        alpha = np.zeros(space.K)
        alpha[k] = 1.0
        assert float(loss_prior(space, alpha).data) == pytest.approx(w[k])


def test_prior_shape_checked(space):
    with pytest.raises(ValueError):
        loss_prior(space, np.zeros(space.K + 1))


def test_data_loss_zero_on_own_rendering(space, skel, rng):
    st = rest_state(space, skel, beta=rng.normal(size=10))
    assert float(loss_data(st, render(st, space, skel), skel, space).data) < 1e-9


def test_data_loss_is_unsquared_norm(space, skel):
    st = rest_state(space, skel)
    frame = render(st, space, skel)
    kp = frame.keypoints.copy()
    kp[4] += (3.0, 4.0)
    moved = ObservedFrame(kp, frame.visibility)
    assert float(loss_data(st, moved, skel, space).data) == pytest.approx(5.0, abs=1e-8)


def test_data_loss_ignores_hidden_keypoints(space, skel):
    st = rest_state(space, skel)
    frame = render(st, space, skel)
    kp = frame.keypoints.copy()
    vis = frame.visibility.copy()
    kp[4] += 100.0
    kp[5] = np.nan
    vis[4], vis[5] = OCCLUDED, UNLABELED
    assert float(loss_data(st, ObservedFrame(kp, vis), skel, space).data) < 1e-9


def test_smpl_loss_sums_two_norms(space, skel):
    st = rest_state(space, skel)
    theta = decode(space, st.alpha) + np.r_[3.0, 4.0, np.zeros(70)]
    beta = np.r_[np.zeros(9), 2.0]
    assert float(loss_smpl(st, theta, beta, space).data) == pytest.approx(7.0)


def test_combined_weights():
    total = combine_losses(ad.Tensor(1.0), ad.Tensor(2.0), ad.Tensor(3.0))
    assert float(total.data) == 1.0 + LAMBDA_DATA * 2.0 + LAMBDA_SMPL * 3.0
    assert float(combine_losses(ad.Tensor(1.0), ad.Tensor(2.0)).data) == 1.0 + LAMBDA_DATA * 2.0


def test_loss_mem_gradients(space, skel, rng):
    truth = CaptureState(rng.normal(size=space.K) * 0.1, rng.normal(size=10), 520.0, (480.0, 510.0))
    frame = render(truth, space, skel)
    base = CaptureState(truth.alpha + 0.05, truth.beta * 0.9, 500.0, (470.0, 500.0))
    sup = (decode(space, truth.alpha), truth.beta)

    def as_fn(name):
        def f(v):
            fields = {"alpha": base.alpha, "beta": base.beta, "s": base.s, "t": base.t, name: v}
            return loss_mem(type("S", (), fields), frame, space, skel, supervision=sup)
        return f

    for name, x0 in (("alpha", base.alpha), ("beta", base.beta), ("t", base.t), ("s", np.array(base.s))):
        report = ad.check_gradient(as_fn(name), x0, step=1e-6, tol=1e-4)
        assert report.passed, f"{name}: {report}"


# -- state and frame validation ---------------------------------------------------


def test_state_rejects_bad_scale():
    with pytest.raises(ValueError):
        CaptureState(np.zeros(3), np.zeros(10), 0.0, (0, 0))
    with pytest.raises(ValueError):
        CaptureState(np.zeros(3), np.zeros(10), float("nan"), (0, 0))


def test_frame_validation():
    with pytest.raises(ValueError):
        ObservedFrame(np.zeros((25, 2)), np.full(25, 3))
    with pytest.raises(ValueError):
        ObservedFrame(np.full((25, 2), np.nan), np.full(25, VISIBLE))
    ObservedFrame(np.full((25, 2), np.nan), np.full(25, UNLABELED))


# -- single-frame fitting -----------------------------------------------------------


def test_fit_from_exact_minimum_stops_immediately(space, skel):
    truth = rest_state(space, skel)
    res = fit_frame(render(truth, space, skel), space, skel, init=truth)
    assert res.converged and res.iterations <= 1
    np.testing.assert_allclose(res.state.alpha, 0, atol=1e-9)


def test_fit_recovers_rendered_pose(space, skel, toy_small):
    truth = toy_small.states[0][3]
    frame = render(truth, space, skel)
    res = fit_frame(frame, space, skel)
    assert res.converged, res.reason
    pred = render(res.state, space, skel).keypoints
    assert np.abs(pred - frame.keypoints).max() < 0.5


def test_fit_loss_history_nonincreasing(space, skel, toy_small):
    frame = render(toy_small.states[0][10], space, skel)
    for method in ("gauss_newton", "adam"):
        res = fit_frame(frame, space, skel, config=FitConfig(method=method, max_iter=150))
        h = np.array(res.history)
        assert (np.diff(h) <= 1e-12 * np.abs(h[:-1])).all()
        assert h[-1] < h[0]


def test_fit_translation_equivariant(space, skel, toy_small):
    frame = render(toy_small.states[0][5], space, skel)
    shift = np.array([37.0, -12.5])
    moved = ObservedFrame(frame.keypoints + shift, frame.visibility)
    a = fit_frame(frame, space, skel)
    b = fit_frame(moved, space, skel)
    np.testing.assert_allclose(b.state.t - a.state.t, shift, atol=1e-6)
    np.testing.assert_allclose(b.state.alpha, a.state.alpha, atol=1e-6)
    np.testing.assert_allclose(b.state.beta, a.state.beta, atol=1e-6)
    assert b.state.s == pytest.approx(a.state.s, rel=1e-6)


def test_fit_scale_equivariant(space, skel, toy_small):
    frame = render(toy_small.states[0][5], space, skel)
    c = 1.7
    a = fit_frame(frame, space, skel)
    b = fit_frame(ObservedFrame(frame.keypoints * c, frame.visibility), space, skel)
    assert b.state.s == pytest.approx(c * a.state.s, rel=1e-6)
    np.testing.assert_allclose(b.state.t, c * a.state.t, rtol=1e-6)
    np.testing.assert_allclose(b.state.alpha, a.state.alpha, atol=1e-6)


def test_initial_state_scale_equivariant(space, skel, toy_small):
    frame = render(toy_small.states[0][5], space, skel)
    a = initial_state(frame, space, skel)
    b = initial_state(ObservedFrame(frame.keypoints * 3.0, frame.visibility), space, skel)
    assert b.s == pytest.approx(3.0 * a.s)
    np.testing.assert_allclose(b.t, 3.0 * a.t)


def test_initial_state_without_torso(space, skel):
    frame = render(rest_state(space, skel), space, skel)
    vis = frame.visibility.copy()
    vis[[1, 8]] = OCCLUDED
    st = initial_state(ObservedFrame(frame.keypoints, vis), space, skel)
    assert st.s > 0 and np.isfinite(st.t).all()


def test_underdetermined_frame(space, skel):
    frame = render(rest_state(space, skel), space, skel)
    vis = np.full(25, OCCLUDED)
    vis[:5] = VISIBLE
    with pytest.raises(UnderdeterminedFrame):
        fit_frame(ObservedFrame(frame.keypoints, vis), space, skel)


def test_fit_rejects_wrong_init_and_method(space, skel):
    frame = render(rest_state(space, skel), space, skel)
    with pytest.raises(ValueError):
        fit_frame(frame, space, skel, init=CaptureState(np.zeros(3), np.zeros(10), 1.0, (0, 0)))
    with pytest.raises(ValueError):
        fit_frame(frame, space, skel, config=FitConfig(method="sgd"))


# -- sub-motion selection -------------------------------------------------------------


def test_selection_picks_generating_space(toy_small, skel):
    spaces = toy_small.spaces
    for idx, sp in enumerate(spaces):
        frame = render(rest_state(sp, skel), sp, skel)
        sel = select_submotion(frame, spaces, skel)
        assert sel.index == idx and sel.label == sp.submotion
        assert sel.residuals[idx] < 1e-6


def test_selection_tie_goes_to_lower_index(space, skel):
    twin = replace(space, submotion="twin")
    frame = render(rest_state(space, skel), space, skel)
    sel = select_submotion(frame, [space, twin], skel)
    assert sel.index == 0


def test_selection_needs_two_spaces(space, skel):
    with pytest.raises(ValueError):
        select_submotion(render(rest_state(space, skel), space, skel), [space], skel)


# -- whole clips ---------------------------------------------------------------------


def test_capture_clip_reprojection(toy_small, skel):
    clip = toy_small.clips[1]
    frames = clip.frames()[:20]
    out = capture_clip(frames, toy_small.spaces, skel, clip.submotions[:20])
    err = [np.linalg.norm(fc.reproj2d - f.keypoints, axis=1).mean() for fc, f in zip(out, frames)]
    assert max(err) < 0.5


def test_warm_start_needs_fewer_iterations(toy_small, skel):
    clip = toy_small.clips[2]
    frames, labels = clip.frames()[:12], clip.submotions[:12]
    warm = capture_clip(frames, toy_small.spaces, skel, labels, warm_start=True)
    cold = capture_clip(frames, toy_small.spaces, skel, labels, warm_start=False)
    assert sum(f.iterations for f in warm) < sum(f.iterations for f in cold)


def test_constant_clip_gives_constant_states(space, skel, toy_small):
    frame = render(toy_small.states[0][2], space, skel)
    out = capture_clip([frame] * 4, [space], skel, [space.submotion] * 4)
    for fc in out[1:]:
        np.testing.assert_allclose(fc.state.alpha, out[0].state.alpha, atol=1e-5)
        assert fc.iterations <= out[0].iterations


def test_failed_frame_is_recorded(space, skel, caplog):
    good = render(rest_state(space, skel), space, skel)
    vis = np.full(25, UNLABELED)
    vis[:3] = VISIBLE
    bad = ObservedFrame(good.keypoints, vis)
    with caplog.at_level(logging.WARNING):
        out = capture_clip([good, bad, good], [space], skel, [space.submotion] * 3)
    assert out[1].state is None and "visible" in out[1].error
    assert out[2].state is not None
    assert out[1].to_json() == {"error": out[1].error}
    assert set(out[0].to_json()) == {"submotion", "alpha", "beta", "s", "t", "joints3d", "reproj2d", "loss"}


def test_unknown_label(space, skel):
    frame = render(rest_state(space, skel), space, skel)
    out = capture_clip([frame], [space], skel, ["nope"])
    assert out[0].state is None
    with pytest.raises(ValueError):
        capture_clip([], [space], skel)


def test_capture_error_hierarchy():
    assert issubclass(UnderdeterminedFrame, CaptureError)
