"""Analysis-by-synthesis capture of pose coefficients, shape and camera.

Each frame is fitted by minimizing

    L_mem = L_prior + w_data * L_data + w_smpl * L_smpl

over (alpha, beta, log s, t). The default solver is a damped Gauss-Newton
method on the quadratic majorizer of the norm terms; an Adam-style solver is
also available. Both accept only steps that do not increase the loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .embedding import EmbeddingSpace, decode, prior_weights
from .kinematics import (
    NECK_KEYPOINT,
    PELVIS_KEYPOINT,
    CameraParams,
    SkeletonDef,
    fk_tensor,
    fk_with_jacobian,
    forward_kinematics,
    project,
    project_tensor,
)

log = logging.getLogger(__name__)

UNLABELED, OCCLUDED, VISIBLE = 0, 1, 2
LAMBDA_DATA = 10.0
LAMBDA_SMPL = 2.0
MIN_VISIBLE = 6


class CaptureError(RuntimeError):
    pass


class UnderdeterminedFrame(CaptureError):
    pass


class FitDiverged(CaptureError):
    def __init__(self, iteration: int):
        super().__init__(f"loss became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class ObservedFrame:
    keypoints: np.ndarray   # (25, 2) pixels
    visibility: np.ndarray  # (25,) in {UNLABELED, OCCLUDED, VISIBLE}

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=np.float64)
        vis = np.array(self.visibility, dtype=np.int64)
        if kp.ndim != 2 or kp.shape[1] != 2 or vis.shape != (kp.shape[0],):
            raise ValueError(f"keypoints {kp.shape} and visibility {vis.shape} disagree")
        if not np.isin(vis, (UNLABELED, OCCLUDED, VISIBLE)).all():
            raise ValueError("visibility flags must be 0 (unlabeled), 1 (occluded) or 2 (visible)")
        if not np.isfinite(kp[vis == VISIBLE]).all():
            raise ValueError("visible keypoints must be finite")
        kp.flags.writeable = False
        vis.flags.writeable = False
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "visibility", vis)

    @property
    def mask(self) -> np.ndarray:
        return (self.visibility == VISIBLE).astype(np.float64)

    @property
    def n_visible(self) -> int:
        return int((self.visibility == VISIBLE).sum())

    def clean_keypoints(self) -> np.ndarray:
        return np.where(self.visibility[:, None] == VISIBLE, self.keypoints, 0.0)


@dataclass(frozen=True)
class CaptureState:
    alpha: np.ndarray
    beta: np.ndarray
    s: float
    t: np.ndarray
    submotion: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.s) and self.s > 0):
            raise ValueError(f"camera scale must be positive, got {self.s}")
        object.__setattr__(self, "alpha", np.array(self.alpha, dtype=np.float64))
        object.__setattr__(self, "beta", np.array(self.beta, dtype=np.float64))
        object.__setattr__(self, "t", np.array(self.t, dtype=np.float64).reshape(2))
        object.__setattr__(self, "s", float(self.s))

    @property
    def camera(self) -> CameraParams:
        return CameraParams(self.s, tuple(self.t))

    def theta(self, space: EmbeddingSpace) -> np.ndarray:
        return decode(space, self.alpha)


@dataclass
class FitConfig:
    max_iter: int = 2000
    grad_tol: float = 1e-6
    lr: float = 0.02
    lr_max: float = 0.2
    lr_min: float = 1e-12
    grow: float = 1.2
    shrink: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-12
    lambda_data: float = LAMBDA_DATA
    lambda_smpl: float = LAMBDA_SMPL
    min_visible: int = MIN_VISIBLE
    method: str = "gauss_newton"
    damping: float = 1e-3
    step_tol: float = 1e-13


@dataclass
class FitResult:
    state: CaptureState
    loss: float
    iterations: int
    converged: bool
    reason: str
    grad_norm: float
    history: list = field(default_factory=list)


# -- losses -------------------------------------------------------------------


def _field(state, name):
    return ad.as_tensor(getattr(state, name))


def loss_prior(space: EmbeddingSpace, alpha, alpha_mean=None, weights=None) -> ad.Tensor:
    """``|| W * (alpha_mean - alpha) ||_2``; the training-set coefficient mean is zero by default."""
    alpha = ad.as_tensor(alpha)
    if alpha.shape != (space.K,):
        raise ValueError(f"alpha has shape {alpha.shape}, expected ({space.K},)")
    w = prior_weights(space) if weights is None else np.asarray(weights, dtype=np.float64)
    abar = np.zeros(space.K) if alpha_mean is None else np.asarray(alpha_mean, dtype=np.float64)
    return ad.norm(ad.mul(ad.sub(abar, alpha), w))


def predicted_keypoints(state, skel: SkeletonDef, space: EmbeddingSpace) -> ad.Tensor:
    alpha = _field(state, "alpha")
    theta = ad.add(ad.matmul(alpha, space.bases), space.mean)
    joints = fk_tensor(skel, theta, _field(state, "beta"))
    return project_tensor(joints, _field(state, "s"), _field(state, "t"), skel.keypoint_regressor)


def loss_data(state, frame: ObservedFrame, skel: SkeletonDef, space: EmbeddingSpace) -> ad.Tensor:
    """``|| V * (J - J_hat) ||_2`` over visible keypoints."""
    pred = predicted_keypoints(state, skel, space)
    resid = ad.sub(frame.clean_keypoints(), pred)
    return ad.norm(ad.mul(resid, frame.mask[:, None] * np.ones(2)))


def loss_smpl(state, gt_theta, gt_beta, space: EmbeddingSpace) -> ad.Tensor:
    alpha = _field(state, "alpha")
    theta = ad.add(ad.matmul(alpha, space.bases), space.mean)
    return ad.add(
        ad.norm(ad.sub(np.asarray(gt_theta, dtype=np.float64), theta)),
        ad.norm(ad.sub(np.asarray(gt_beta, dtype=np.float64), _field(state, "beta"))),
    )


def combine_losses(prior, data, smpl=None, lambda_data: float = LAMBDA_DATA, lambda_smpl: float = LAMBDA_SMPL):
    total = ad.add(prior, ad.mul(data, lambda_data))
    if smpl is not None:
        total = ad.add(total, ad.mul(smpl, lambda_smpl))
    return total


def loss_mem(
    state,
    frame: ObservedFrame,
    space: EmbeddingSpace,
    skel: SkeletonDef,
    supervision=None,
    lambda_data: float = LAMBDA_DATA,
    lambda_smpl: float = LAMBDA_SMPL,
) -> ad.Tensor:
    """Weighted capture loss; ``supervision`` is an optional ``(theta, beta)`` pair."""
    prior = loss_prior(space, _field(state, "alpha"))
    data = loss_data(state, frame, skel, space)
    smpl = None if supervision is None else loss_smpl(state, supervision[0], supervision[1], space)
    return combine_losses(prior, data, smpl, lambda_data, lambda_smpl)


# -- initialization -------------------------------------------------------------


def initial_state(frame: ObservedFrame, space: EmbeddingSpace, skel: SkeletonDef) -> CaptureState:
    """Mean pose, zero shape; scale from torso length, translation from the visible centroid."""
    model = skel.keypoint_regressor @ forward_kinematics(skel, space.mean, np.zeros(skel.n_shape))
    vis = frame.visibility == VISIBLE
    kp = frame.keypoints
    s = None
    if vis[NECK_KEYPOINT] and vis[PELVIS_KEYPOINT]:
        px = np.linalg.norm(kp[NECK_KEYPOINT] - kp[PELVIS_KEYPOINT])
        rest = np.linalg.norm(model[NECK_KEYPOINT] - model[PELVIS_KEYPOINT])
        if px > 0 and rest > 0:
            s = px / rest
    if s is None:
        ext_px = np.ptp(kp[vis], axis=0).max()
        ext_m = np.ptp(model[vis, :2], axis=0).max()
        s = ext_px / ext_m if ext_px > 0 and ext_m > 0 else 1.0
    t = kp[vis].mean(axis=0) - s * model[vis, :2].mean(axis=0)
    return CaptureState(np.zeros(space.K), np.zeros(skel.n_shape), s, t, space.submotion)


# -- optimizer ----------------------------------------------------------------


@dataclass
class _Eval:
    loss: float
    grad: np.ndarray         # full gradient in x
    grad_smooth: np.ndarray  # gradient of every term except the data norm
    prior_res: np.ndarray    # W * (alpha_mean - alpha)
    data_res: np.ndarray     # masked keypoint residual, flattened
    smpl_res: tuple


class _Problem:
    """Loss, gradient and residual Jacobians in the optimizer's parameterization.

    x = [alpha (K), beta (B), log s, tau (2)] with t = t_ref + t_scale * tau.
    """

    def __init__(self, frame, space, skel, init: CaptureState, config: FitConfig, supervision=None):
        self.frame, self.space, self.skel, self.config = frame, space, skel, config
        self.supervision = supervision
        self.K, self.B = space.K, skel.n_shape
        self.t_ref = init.t.copy()
        self.t_scale = init.s
        self.weights = prior_weights(space)
        self.obs_scale = 1.0 + float(np.abs(frame.clean_keypoints()).max())

    @property
    def size(self) -> int:
        return self.K + self.B + 3

    def pack(self, state: CaptureState) -> np.ndarray:
        tau = (state.t - self.t_ref) / self.t_scale
        return np.concatenate([state.alpha, state.beta, [np.log(state.s)], tau])

    def unpack(self, x: np.ndarray, label: str) -> CaptureState:
        K, B = self.K, self.B
        return CaptureState(x[:K], x[K:K + B], float(np.exp(x[K + B])), self.t_ref + self.t_scale * x[K + B + 1:], label)

    def _to_x(self, grads, leaves, s_val) -> np.ndarray:
        alpha, beta, s, t = leaves
        return np.concatenate([grads[alpha], grads[beta], [float(grads[s]) * s_val], grads[t] * self.t_scale])

    def evaluate(self, x: np.ndarray) -> _Eval:
        K, B = self.K, self.B
        alpha = ad.Tensor(x[:K], requires_grad=True)
        beta = ad.Tensor(x[K:K + B], requires_grad=True)
        s_val = float(np.exp(x[K + B]))
        s = ad.Tensor(s_val, requires_grad=True)
        t = ad.Tensor(self.t_ref + self.t_scale * x[K + B + 1:], requires_grad=True)
        leaves = (alpha, beta, s, t)
        state = _TensorState(*leaves)
        cfg = self.config
        with ad.Tape() as tape:
            prior = loss_prior(self.space, alpha, weights=self.weights)
            data = loss_data(state, self.frame, self.skel, self.space)
            smooth = prior
            smpl = None
            if self.supervision is not None:
                smpl = loss_smpl(state, self.supervision[0], self.supervision[1], self.space)
                smooth = ad.add(prior, ad.mul(smpl, cfg.lambda_smpl))
            total = combine_losses(prior, data, smpl, cfg.lambda_data, cfg.lambda_smpl)
        grad = self._to_x(tape.backward(total), leaves, s_val)
        grad_smooth = self._to_x(tape.backward(smooth), leaves, s_val)
        pred = _model_keypoints(self, x)
        data_res = ((self.frame.clean_keypoints() - pred) * self.frame.mask[:, None]).reshape(-1)
        smpl_res = ()
        if self.supervision is not None:
            smpl_res = (
                np.asarray(self.supervision[0]) - decode(self.space, x[:K]),
                np.asarray(self.supervision[1]) - x[K:K + B],
            )
        return _Eval(float(total.data), grad, grad_smooth, self.weights * (0.0 - x[:K]), data_res, smpl_res)

    def data_jacobian(self, x: np.ndarray) -> np.ndarray:
        """d(masked keypoint residual)/dx, shape (2 * n_kp, dim x)."""
        K, B = self.K, self.B
        theta = decode(self.space, x[:K])
        s = float(np.exp(x[K + B]))
        joints, jt, jb = fk_with_jacobian(self.skel, theta, x[K:K + B])
        reg = self.skel.keypoint_regressor
        kp3 = reg @ joints
        n = self.skel.n_joints
        d_theta = np.einsum("kj,jab->kab", reg, jt.reshape(n, 3, -1))[:, :2]  # (nk, 2, 3N)
        d_beta = np.einsum("kj,jab->kab", reg, jb)[:, :2]
        nk = reg.shape[0]
        J = np.zeros((nk, 2, len(x)))
        J[:, :, :K] = s * d_theta @ self.space.bases.T
        J[:, :, K:K + B] = s * d_beta
        J[:, :, K + B] = s * kp3[:, :2]
        J[:, 0, K + B + 1] = self.t_scale
        J[:, 1, K + B + 2] = self.t_scale
        J *= self.frame.mask[:, None, None]
        return -J.reshape(2 * nk, -1)

    def at_data_kink(self, ev: _Eval) -> bool:
        return np.linalg.norm(ev.data_res) <= 1e-9 * self.obs_scale


def _model_keypoints(problem: _Problem, x: np.ndarray) -> np.ndarray:
    K, B = problem.K, problem.B
    theta = decode(problem.space, x[:K])
    s = float(np.exp(x[K + B]))
    t = problem.t_ref + problem.t_scale * x[K + B + 1:]
    joints = forward_kinematics(problem.skel, theta, x[K:K + B])
    return project(joints, CameraParams(s, tuple(t)), problem.skel.keypoint_regressor)


@dataclass
class _TensorState:
    alpha: ad.Tensor
    beta: ad.Tensor
    s: ad.Tensor
    t: ad.Tensor


def _min_norm_element(g_smooth: np.ndarray, M: np.ndarray) -> np.ndarray:
    U, sig, _ = np.linalg.svd(M, full_matrices=False)
    keep = sig > sig.max() * 1e-12 if sig.size else sig > 0
    U, sig = U[:, keep], sig[keep]
    gp = U.T @ g_smooth
    outside = g_smooth - U @ gp
    if np.linalg.norm(gp / sig) <= 1.0:
        return outside
    lo, hi = 0.0, float(np.abs(gp * sig).max()) + 1.0
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        if np.linalg.norm(sig * gp / (sig**2 + mu)) > 1.0:
            lo = mu
        else:
            hi = mu
    w = -sig * gp / (sig**2 + hi)
    return outside + U @ (gp + sig * w)


def min_norm_subgradient(g_smooth: np.ndarray, M: np.ndarray) -> float:
    """Norm of the smallest element of ``{g_smooth + M u : ||u|| <= 1}``.

    This is the stationarity measure at a point where a norm term ``||r||``
    sits exactly at ``r = 0``; ``M`` is the weighted transposed Jacobian of r.
    """
    return float(np.linalg.norm(_min_norm_element(g_smooth, M)))


def _prior_jacobian(problem: _Problem) -> np.ndarray:
    A = np.zeros((problem.K, problem.size))
    A[:, :problem.K] = -np.diag(problem.weights)
    return A


def _descent_gradient(problem: _Problem, x: np.ndarray, ev: _Eval) -> np.ndarray:
    """Minimum-norm subgradient; the plain gradient away from the norm kinks."""
    # the backward pass uses the zero subgradient of a norm at its kink
    if problem.at_data_kink(ev):
        return _min_norm_element(ev.grad_smooth, problem.config.lambda_data * problem.data_jacobian(x).T)
    if not ev.prior_res.any():
        return _min_norm_element(ev.grad, _prior_jacobian(problem).T)
    return ev.grad


def _stationarity(problem: _Problem, x: np.ndarray, ev: _Eval) -> float:
    return float(np.linalg.norm(_descent_gradient(problem, x, ev)))


def _gauss_newton_step(problem: _Problem, x: np.ndarray, ev: _Eval, damping: float) -> np.ndarray:
    """Minimize the quadratic majorizer of the norm losses plus a damping term.

    ``||y|| <= ||y + dy||^2 / (2 ||y||) + ||y|| / 2``, so each norm term becomes
    a weighted least-squares term with weight ``lambda / ||y||``.
    """
    cfg = problem.config
    K, B, n = problem.K, problem.B, problem.size
    rows, rhs = [], []

    def add_term(res, jac, lam, floor):
        w = np.sqrt(lam / max(np.linalg.norm(res), floor))
        rows.append(w * jac)
        rhs.append(-w * res)

    add_term(ev.prior_res, _prior_jacobian(problem), 1.0, 1e-3)
    Jr = problem.data_jacobian(x)
    add_term(ev.data_res, Jr, cfg.lambda_data, 1e-12 * problem.obs_scale)
    if ev.smpl_res:
        E1 = np.zeros((problem.space.dim, n))
        E1[:, :K] = -problem.space.bases.T
        add_term(ev.smpl_res[0], E1, cfg.lambda_smpl, 1e-9)
        E2 = np.zeros((B, n))
        E2[:, K:K + B] = -np.eye(B)
        add_term(ev.smpl_res[1], E2, cfg.lambda_smpl, 1e-9)
    rows.append(np.sqrt(damping) * np.eye(n))
    rhs.append(np.zeros(n))
    step, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    return step


def fit_frame(
    frame: ObservedFrame,
    space: EmbeddingSpace,
    skel: SkeletonDef,
    init: CaptureState | None = None,
    config: FitConfig | None = None,
    supervision=None,
) -> FitResult:
    """Minimize the capture loss for one frame starting from ``init``.

    ``config.method`` is ``"gauss_newton"`` (damped, reweighted Gauss-Newton)
    or ``"adam"``. Both accept a step only if it does not increase the loss,
    so the loss history is nonincreasing. Stops when the stationarity measure
    drops below ``grad_tol``, the step collapses, or after ``max_iter``
    iterations.
    """
    config = config or FitConfig()
    if frame.n_visible < config.min_visible:
        raise UnderdeterminedFrame(f"{frame.n_visible} visible keypoints, need {config.min_visible}")
    if init is None:
        init = initial_state(frame, space, skel)
    if init.alpha.shape != (space.K,):
        raise ValueError(f"initial alpha has length {len(init.alpha)}, space has K={space.K}")
    problem = _Problem(frame, space, skel, init, config, supervision)
    x = problem.pack(init)
    ev = problem.evaluate(x)
    if not np.isfinite(ev.loss):
        raise FitDiverged(0)
    if config.method == "adam":
        x, ev, it, reason, gnorm, history = _run_adam(problem, x, ev)
    elif config.method == "gauss_newton":
        x, ev, it, reason, gnorm, history = _run_gauss_newton(problem, x, ev)
    else:
        raise ValueError(f"unknown fit method {config.method!r}")
    converged = reason in ("grad_tol", "step_tol")
    return FitResult(problem.unpack(x, space.submotion), ev.loss, it, converged, reason, gnorm, history)


def _run_gauss_newton(problem: _Problem, x, ev):
    cfg = problem.config
    damping = cfg.damping
    history = [ev.loss]
    gnorm = _stationarity(problem, x, ev)
    it = 0
    reason = "max_iter"
    while True:
        if gnorm < cfg.grad_tol:
            reason = "grad_tol"
            break
        if it >= cfg.max_iter:
            break
        it += 1
        step = _gauss_newton_step(problem, x, ev, damping)
        if np.linalg.norm(step) <= cfg.step_tol * (1.0 + np.linalg.norm(x)):
            reason = "step_tol"
            break
        x_new = x + step
        ev_new = problem.evaluate(x_new)
        if not np.isfinite(ev_new.loss):
            raise FitDiverged(it)
        if ev_new.loss <= ev.loss:
            x, ev = x_new, ev_new
            history.append(ev.loss)
            damping = max(damping / 3.0, 1e-12)
            gnorm = _stationarity(problem, x, ev)
        else:
            damping *= 4.0
            if damping > 1e16:
                reason = "step_tol"
                break
    return x, ev, it, reason, gnorm, history


def _run_adam(problem: _Problem, x, ev):
    cfg = problem.config
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    lr = cfg.lr
    b1, b2 = cfg.beta1, cfg.beta2
    km = kv = 0  # bias-correction counters; km restarts after a rejected step
    steepest = False
    history = [ev.loss]
    gnorm = _stationarity(problem, x, ev)
    it = 0
    reason = "max_iter"
    while True:
        if gnorm < cfg.grad_tol:
            reason = "grad_tol"
            break
        if lr < cfg.lr_min:
            reason = "step_tol"
            break
        if it >= cfg.max_iter:
            break
        it += 1
        g = _descent_gradient(problem, x, ev)
        m_new = b1 * m + (1 - b1) * g
        v_new = b2 * v + (1 - b2) * g * g
        m_hat = m_new / (1 - b1 ** (km + 1))
        v_hat = v_new / (1 - b2 ** (kv + 1))
        if steepest:
            x_new = x - lr * g / np.linalg.norm(g)
        else:
            x_new = x - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        ev_new = problem.evaluate(x_new)
        if not np.isfinite(ev_new.loss):
            raise FitDiverged(it)
        if ev_new.loss <= ev.loss:
            x, ev = x_new, ev_new
            m, v = m_new, v_new
            km += 1
            kv += 1
            lr = min(lr * cfg.grow, cfg.lr_max)
            steepest = False
            history.append(ev.loss)
            gnorm = _stationarity(problem, x, ev)
        else:
            # Momentum may point uphill, and near a norm kink so can the
            # per-coordinate scaling; the unscaled direction never does.
            if km == 0:
                steepest = True
            m = np.zeros_like(x)
            km = 0
            lr *= cfg.shrink
    return x, ev, it, reason, gnorm, history


# -- sub-motion selection and clips -------------------------------------------


@dataclass
class Selection:
    label: str
    index: int
    residuals: list
    results: list


def select_submotion(
    frame: ObservedFrame,
    spaces: Sequence[EmbeddingSpace],
    skel: SkeletonDef,
    config: FitConfig | None = None,
    inits: Sequence[CaptureState | None] | None = None,
) -> Selection:
    """Fit every candidate space and pick the one with the lowest final data loss.

    Ties go to the lower index. Spaces whose fit fails get an infinite residual.
    """
    if len(spaces) < 2:
        raise ValueError("sub-motion selection needs at least two candidate spaces")
    config = config or FitConfig()
    residuals, results, errors = [], [], []
    for i, space in enumerate(spaces):
        init = inits[i] if inits is not None else None
        try:
            res = fit_frame(frame, space, skel, init, config)
        except CaptureError as exc:
            residuals.append(np.inf)
            results.append(None)
            errors.append(f"{space.submotion}: {exc}")
            continue
        data = float(loss_data(res.state, frame, skel, space).data)
        residuals.append(data)
        results.append(res)
    if all(r is None for r in results):
        raise CaptureError("all sub-motion fits failed: " + "; ".join(errors))
    best = int(np.argmin(residuals))
    return Selection(spaces[best].submotion, best, residuals, results)


@dataclass
class FrameCapture:
    state: CaptureState | None
    joints3d: np.ndarray | None
    reproj2d: np.ndarray | None
    loss: float
    iterations: int
    error: str | None = None

    def to_json(self) -> dict:
        if self.state is None:
            return {"error": self.error}
        st = self.state
        return {
            "submotion": st.submotion,
            "alpha": st.alpha.tolist(),
            "beta": st.beta.tolist(),
            "s": st.s,
            "t": st.t.tolist(),
            "joints3d": self.joints3d.tolist(),
            "reproj2d": self.reproj2d.tolist(),
            "loss": self.loss,
        }


def capture_clip(
    frames: Sequence[ObservedFrame],
    spaces: Sequence[EmbeddingSpace],
    skel: SkeletonDef,
    submotion_labels: Sequence[str] | None = None,
    config: FitConfig | None = None,
    warm_start: bool = True,
) -> list[FrameCapture]:
    """Fit every frame, warm-starting from the previous frame's state within one space.

    Known labels pick the space directly; otherwise the space is selected per
    frame. A failing frame is recorded and the chain continues from the last
    good state.
    """
    if len(frames) == 0:
        raise ValueError("clip has no frames")
    config = config or FitConfig()
    by_label = {sp.submotion: sp for sp in spaces}
    out: list[FrameCapture] = []
    prev: CaptureState | None = None
    prev_space: EmbeddingSpace | None = None
    for idx, frame in enumerate(frames):
        try:
            if submotion_labels is not None:
                label = submotion_labels[idx]
                if label not in by_label:
                    raise CaptureError(f"no embedding space for sub-motion {label!r}")
                space = by_label[label]
                init = prev if (warm_start and space is prev_space) else None
                res = fit_frame(frame, space, skel, init, config)
            else:
                inits = None
                if warm_start and prev is not None:
                    # a pose carried into another space is a poor start, so
                    # only the previous frame's own space is warm-started
                    inits = [prev if sp is prev_space else None for sp in spaces]
                sel = select_submotion(frame, spaces, skel, config, inits)
                space = spaces[sel.index]
                res = sel.results[sel.index]
        except CaptureError as exc:
            log.warning("frame %d failed: %s", idx, exc)
            out.append(FrameCapture(None, None, None, float("nan"), 0, str(exc)))
            continue
        state = res.state
        joints = forward_kinematics(skel, decode(space, state.alpha), state.beta)
        reproj = project(joints, state.camera, skel.keypoint_regressor)
        out.append(FrameCapture(state, joints, reproj, res.loss, res.iterations))
        prev, prev_space = state, space
    return out
