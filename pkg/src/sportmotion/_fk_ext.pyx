# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled forward kinematics with analytic Jacobians.

Same contract as ``_fk_py``; selected at import by ``sportmotion.kernels``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, sqrt

cnp.import_array()

cdef double SMALL = 1e-3


cdef void _rot_jl(double vx, double vy, double vz, double[:, ::1] R, double[:, ::1] Jl) noexcept nogil:
    cdef double th2 = vx * vx + vy * vy + vz * vz
    cdef double th, a, b, c, h
    cdef double K[3][3]
    cdef double K2[3][3]
    cdef int r, q, m
    if th2 < SMALL * SMALL:
        a = 1.0 - th2 / 6.0 + th2 * th2 / 120.0
        b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0
        c = 1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0
    else:
        th = sqrt(th2)
        a = sin(th) / th
        h = sin(0.5 * th) / th
        b = 2.0 * h * h
        c = (th - sin(th)) / (th2 * th)
    K[0][0] = 0.0; K[0][1] = -vz; K[0][2] = vy
    K[1][0] = vz; K[1][1] = 0.0; K[1][2] = -vx
    K[2][0] = -vy; K[2][1] = vx; K[2][2] = 0.0
    for r in range(3):
        for q in range(3):
            K2[r][q] = 0.0
            for m in range(3):
                K2[r][q] += K[r][m] * K[m][q]
    for r in range(3):
        for q in range(3):
            R[r, q] = a * K[r][q] + b * K2[r][q]
            Jl[r, q] = b * K[r][q] + c * K2[r][q]
        R[r, r] += 1.0
        Jl[r, r] += 1.0


def rot_and_left_jacobian(v):
    cdef const double[:, ::1] vv = np.ascontiguousarray(v, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t m = vv.shape[0], i
    R = np.empty((m, 3, 3))
    Jl = np.empty((m, 3, 3))
    cdef double[:, :, ::1] Rv = R
    cdef double[:, :, ::1] Jv = Jl
    for i in range(m):
        _rot_jl(vv[i, 0], vv[i, 1], vv[i, 2], Rv[i], Jv[i])
    return R, Jl


def rodrigues(v):
    R, _ = rot_and_left_jacobian(np.asarray(v, dtype=np.float64).reshape(1, 3))
    return R[0]


def fk_jacobian(parents, offsets, theta, shape_basis, bint with_jac=True):
    cdef const cnp.int64_t[::1] par = np.ascontiguousarray(parents, dtype=np.int64)
    cdef const double[:, ::1] off = np.ascontiguousarray(offsets, dtype=np.float64)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64).reshape(-1)
    cdef const double[:, :, ::1] sb = np.ascontiguousarray(shape_basis, dtype=np.float64)
    cdef Py_ssize_t n = par.shape[0], nb = sb.shape[0]
    cdef Py_ssize_t i, k, p, r, q, m, c, b
    if th.shape[0] != 3 * n:
        raise ValueError(f"theta has length {th.shape[0]}, expected {3 * n}")

    R_a = np.empty((n, 3, 3))
    Jl_a = np.empty((n, 3, 3))
    G_a = np.empty((n, 3, 3))
    Gp_a = np.empty((n, 3, 3))
    P_a = np.empty((n, 3))
    cdef double[:, :, ::1] R = R_a
    cdef double[:, :, ::1] Jl = Jl_a
    cdef double[:, :, ::1] G = G_a
    cdef double[:, :, ::1] Gp = Gp_a
    cdef double[:, ::1] P = P_a
    cdef double acc

    for i in range(n):
        _rot_jl(th[3 * i], th[3 * i + 1], th[3 * i + 2], R[i], Jl[i])

    for r in range(3):
        P[0, r] = off[0, r]
        for q in range(3):
            G[0, r, q] = R[0, r, q]
            Gp[0, r, q] = 1.0 if r == q else 0.0
    for i in range(1, n):
        p = par[i]
        for r in range(3):
            acc = 0.0
            for q in range(3):
                Gp[i, r, q] = G[p, r, q]
                acc += G[p, r, q] * off[i, q]
            P[i, r] = P[p, r] + acc
            for q in range(3):
                acc = 0.0
                for m in range(3):
                    acc += G[p, r, m] * R[i, m, q]
                G[i, r, q] = acc
    if not with_jac:
        return P_a, None, None

    jt_a = np.zeros((n, 3, 3 * n))
    jb_a = np.empty((n, 3, nb))
    cdef double[:, :, ::1] jt = jt_a
    cdef double[:, :, ::1] jb = jb_a
    cdef double ax[3][3]
    cdef double d0, d1, d2
    cdef Py_ssize_t anc

    for k in range(n):
        # axis for component c: Gpar(k) @ Jl(k) e_c
        for c in range(3):
            for r in range(3):
                acc = 0.0
                for m in range(3):
                    acc += Gp[k, r, m] * Jl[k, m, c]
                ax[c][r] = acc
        for i in range(k + 1, n):
            anc = par[i]
            while anc > k:
                anc = par[anc]
            if anc != k:
                continue
            d0 = P[i, 0] - P[k, 0]
            d1 = P[i, 1] - P[k, 1]
            d2 = P[i, 2] - P[k, 2]
            for c in range(3):
                jt[i, 0, 3 * k + c] = ax[c][1] * d2 - ax[c][2] * d1
                jt[i, 1, 3 * k + c] = ax[c][2] * d0 - ax[c][0] * d2
                jt[i, 2, 3 * k + c] = ax[c][0] * d1 - ax[c][1] * d0

    for i in range(n):
        p = par[i]
        for r in range(3):
            for b in range(nb):
                acc = 0.0
                for m in range(3):
                    acc += Gp[i, r, m] * sb[b, i, m]
                jb[i, r, b] = acc if i == 0 else jb[p, r, b] + acc
    return P_a, jt_a, jb_a
