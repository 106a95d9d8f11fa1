"""Pure numpy forward kinematics with analytic Jacobians (fallback backend)."""

import numpy as np

_SMALL = 1e-3


def rot_and_left_jacobian(v):
    """Rotation matrices and SO(3) left Jacobians for a batch of axis-angles.

    ``v`` is ``(M, 3)``. ``dR/dv_c = [Jl e_c]_x R``.
    """
    v = np.asarray(v, dtype=np.float64)
    th2 = np.einsum("ij,ij->i", v, v)
    th = np.sqrt(th2)
    small = th < _SMALL
    safe = np.where(small, 1.0, th)
    # sin(x)/x, (1 - cos x)/x^2, (x - sin x)/x^3 with series below _SMALL
    a = np.where(small, 1.0 - th2 / 6.0 + th2 * th2 / 120.0, np.sin(safe) / safe)
    half = np.sin(0.5 * safe) / safe
    b = np.where(small, 0.5 - th2 / 24.0 + th2 * th2 / 720.0, 2.0 * half * half)
    c = np.where(small, 1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0, (safe - np.sin(safe)) / (safe * safe * safe))
    K = np.zeros((len(v), 3, 3))
    K[:, 0, 1] = -v[:, 2]
    K[:, 0, 2] = v[:, 1]
    K[:, 1, 0] = v[:, 2]
    K[:, 1, 2] = -v[:, 0]
    K[:, 2, 0] = -v[:, 1]
    K[:, 2, 1] = v[:, 0]
    K2 = K @ K
    eye = np.eye(3)
    R = eye + a[:, None, None] * K + b[:, None, None] * K2
    Jl = eye + b[:, None, None] * K + c[:, None, None] * K2
    return R, Jl


def rodrigues(v):
    R, _ = rot_and_left_jacobian(np.asarray(v, dtype=np.float64).reshape(1, 3))
    return R[0]


def ancestor_mask(parents):
    n = len(parents)
    anc = np.zeros((n, n), dtype=bool)
    for i in range(1, n):
        p = parents[i]
        anc[i] = anc[p]
        anc[i, p] = True
    return anc


def fk_jacobian(parents, offsets, theta, shape_basis, with_jac=True):
    """Joint positions and their Jacobians w.r.t. pose and shape.

    Parameters
    ----------
    parents : (N,) int array, parents[0] == -1, parents[i] < i
    offsets : (N, 3) bone offsets with shape already applied
    theta : (3N,) axis-angle per joint
    shape_basis : (B, N, 3)

    Returns
    -------
    joints (N, 3), jac_theta (N, 3, 3N), jac_beta (N, 3, B); Jacobians are
    None when ``with_jac`` is false.
    """
    n = len(parents)
    v = np.asarray(theta, dtype=np.float64).reshape(n, 3)
    R, Jl = rot_and_left_jacobian(v)
    G = np.empty((n, 3, 3))
    Gpar = np.empty((n, 3, 3))
    P = np.empty((n, 3))
    G[0] = R[0]
    Gpar[0] = np.eye(3)
    P[0] = offsets[0]
    for i in range(1, n):
        p = parents[i]
        Gpar[i] = G[p]
        P[i] = P[p] + G[p] @ offsets[i]
        G[i] = G[p] @ R[i]
    if not with_jac:
        return P, None, None

    anc = ancestor_mask(parents)
    axes = np.swapaxes(Gpar @ Jl, 1, 2)  # (k, c, xyz)
    diff = P[:, None, :] - P[None, :, :]  # (i, k, xyz)
    cr = np.cross(axes[None, :, :, :], diff[:, :, None, :])  # (i, k, c, xyz)
    cr *= anc[:, :, None, None]
    jac_theta = cr.transpose(0, 3, 1, 2).reshape(n, 3, 3 * n)

    nb = shape_basis.shape[0]
    D = Gpar @ np.transpose(shape_basis, (1, 2, 0))  # (N, 3, B)
    jac_beta = np.empty((n, 3, nb))
    jac_beta[0] = D[0]
    for i in range(1, n):
        jac_beta[i] = jac_beta[parents[i]] + D[i]
    return P, jac_theta, jac_beta
