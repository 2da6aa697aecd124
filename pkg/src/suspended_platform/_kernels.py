"""Compiled per-sample kernel for the spherical double pendulum chain.

Everything here works on flat batches and is dtype-generic, so the same
kernel serves float64 simulation and complex128 complex-step
differentiation. Only elementwise arithmetic, cos and sin are used; no
conjugation, abs or branching on values (complex-step safe).

Joint axes, in order: x, y, z of the first spherical joint, x, y of the
second. Link vectors point along -z of their own frame.
"""

import numpy as np
from numba import njit

# rotation axis of each joint in its parent frame
_JOINT_AXIS = (0, 1, 2, 0, 1)


@njit(cache=True, error_model="numpy")
def _matmul33(a, b, out):
    for i in range(3):
        for j in range(3):
            acc = a[i, 0] * b[0, j]
            acc += a[i, 1] * b[1, j]
            acc += a[i, 2] * b[2, j]
            out[i, j] = acc


@njit(cache=True, error_model="numpy")
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True, error_model="numpy")
def _elementary(axis, c, s, out):
    for i in range(3):
        for j in range(3):
            out[i, j] = 0.0
    i1 = (axis + 1) % 3
    i2 = (axis + 2) % 3
    out[axis, axis] = 1.0
    out[i1, i1] = c
    out[i2, i2] = c
    out[i1, i2] = -s
    out[i2, i1] = s


@njit(cache=True, error_model="numpy")
def chain_terms(Q, QD, par, M, H, G, JV, JW, R2out, P1out, Pout):
    """Fill inertia, velocity-product bias, gravity and Jacobians.

    ``par`` is ``(L1, L2, m1, m2, Ixx, Iyy, Izz, g0)``. ``H`` receives
    ``C(q, qd) @ qd`` computed by Newton-Euler projection (no Christoffel
    symbols involved). ``JV``/``JW`` are the world-frame linear (platform
    COM) and angular Jacobians, 3x5.
    """
    n = Q.shape[0]
    dt = Q.dtype
    L1 = par[0]
    L2 = par[1]
    m1 = par[2]
    m2 = par[3]
    g0 = par[7]

    R = np.zeros((5, 3, 3), dtype=dt)
    F = np.zeros((5, 3, 3), dtype=dt)  # cumulative frames after each joint
    axes = np.zeros((5, 3), dtype=dt)
    lever = np.zeros(3, dtype=dt)
    jv = np.zeros((5, 3), dtype=dt)
    j1 = np.zeros((3, 3), dtype=dt)
    w = np.zeros(3, dtype=dt)
    al = np.zeros(3, dtype=dt)
    om1 = np.zeros(3, dtype=dt)
    al1 = np.zeros(3, dtype=dt)
    tmp = np.zeros(3, dtype=dt)
    tmp2 = np.zeros(3, dtype=dt)
    p1 = np.zeros(3, dtype=dt)
    r2 = np.zeros(3, dtype=dt)
    a1 = np.zeros(3, dtype=dt)
    ap = np.zeros(3, dtype=dt)
    Iw = np.zeros((3, 3), dtype=dt)
    Iom = np.zeros(3, dtype=dt)
    tau_rot = np.zeros(3, dtype=dt)
    AI = np.zeros((5, 3), dtype=dt)

    for b in range(n):
        q = Q[b]
        qd = QD[b]
        for j in range(5):
            _elementary(_JOINT_AXIS[j], np.cos(q[j]), np.sin(q[j]), R[j])
        F[0, :, :] = R[0]
        for j in range(1, 5):
            _matmul33(F[j - 1], R[j], F[j])

        # joint j rotates about column axis(j) of the frame preceding it
        axes[0, 0] = 1.0
        axes[0, 1] = 0.0
        axes[0, 2] = 0.0
        for j in range(1, 5):
            for k in range(3):
                axes[j, k] = F[j - 1, k, _JOINT_AXIS[j]]

        for k in range(3):
            p1[k] = -L1 * F[2, k, 2]
            r2[k] = -L2 * F[4, k, 2]

        for j in range(5):
            for k in range(3):
                if j < 3:
                    lever[k] = p1[k] + r2[k]
                else:
                    lever[k] = r2[k]
            _cross(axes[j], lever, jv[j])
        for j in range(3):
            _cross(axes[j], p1, j1[j])

        # velocity-product (qdd = 0) angular accelerations of both links
        for k in range(3):
            w[k] = 0.0
            al[k] = 0.0
        for j in range(5):
            _cross(w, axes[j], tmp)
            for k in range(3):
                al[k] += tmp[k] * qd[j]
                w[k] += axes[j, k] * qd[j]
            if j == 2:
                for k in range(3):
                    om1[k] = w[k]
                    al1[k] = al[k]

        # velocity-product accelerations of the junction mass and platform COM
        _cross(al1, p1, a1)
        _cross(om1, p1, tmp)
        _cross(om1, tmp, tmp2)
        for k in range(3):
            a1[k] += tmp2[k]
        _cross(al, r2, ap)
        _cross(w, r2, tmp)
        _cross(w, tmp, tmp2)
        for k in range(3):
            ap[k] += a1[k] + tmp2[k]

        # platform inertia in world frame
        for i in range(3):
            for j in range(3):
                acc = F[4, i, 0] * par[4] * F[4, j, 0]
                acc += F[4, i, 1] * par[5] * F[4, j, 1]
                acc += F[4, i, 2] * par[6] * F[4, j, 2]
                Iw[i, j] = acc
        for i in range(3):
            Iom[i] = Iw[i, 0] * w[0] + Iw[i, 1] * w[1] + Iw[i, 2] * w[2]
        _cross(w, Iom, tmp)
        for i in range(3):
            tau_rot[i] = (Iw[i, 0] * al[0] + Iw[i, 1] * al[1] + Iw[i, 2] * al[2]) + tmp[i]
        for j in range(5):
            for k in range(3):
                AI[j, k] = axes[j, 0] * Iw[0, k] + axes[j, 1] * Iw[1, k] + axes[j, 2] * Iw[2, k]

        for i in range(5):
            for j in range(5):
                acc = m2 * (jv[i, 0] * jv[j, 0] + jv[i, 1] * jv[j, 1] + jv[i, 2] * jv[j, 2])
                acc += AI[i, 0] * axes[j, 0] + AI[i, 1] * axes[j, 1] + AI[i, 2] * axes[j, 2]
                if i < 3 and j < 3:
                    acc += m1 * (j1[i, 0] * j1[j, 0] + j1[i, 1] * j1[j, 1] + j1[i, 2] * j1[j, 2])
                M[b, i, j] = acc
            hi = m2 * (jv[i, 0] * ap[0] + jv[i, 1] * ap[1] + jv[i, 2] * ap[2])
            hi += axes[i, 0] * tau_rot[0] + axes[i, 1] * tau_rot[1] + axes[i, 2] * tau_rot[2]
            gi = g0 * m2 * jv[i, 2]
            if i < 3:
                hi += m1 * (j1[i, 0] * a1[0] + j1[i, 1] * a1[1] + j1[i, 2] * a1[2])
                gi += g0 * m1 * j1[i, 2]
            H[b, i] = hi
            G[b, i] = gi
            for k in range(3):
                JV[b, k, i] = jv[i, k]
                JW[b, k, i] = axes[i, k]

        for i in range(3):
            P1out[b, i] = p1[i]
            Pout[b, i] = p1[i] + r2[i]
            for j in range(3):
                R2out[b, i, j] = F[4, i, j]


@njit(cache=True, error_model="numpy")
def forward_dynamics(Q, QD, U, TAU, par, QDD, COND):
    """``QDD = M^-1 (J^T U + TAU - C qd - g)`` per sample.

    ``U`` holds body wrenches ``(f, m)`` in the platform frame. The solve is
    an unpivoted LDL^T factorization (M is SPD). ``COND`` receives
    ``max(diag M) / min(pivot)``, a cheap lower estimate of cond(M).
    """
    n = Q.shape[0]
    dt = Q.dtype
    M = np.empty((n, 5, 5), dtype=dt)
    H = np.empty((n, 5), dtype=dt)
    G = np.empty((n, 5), dtype=dt)
    JV = np.empty((n, 3, 5), dtype=dt)
    JW = np.empty((n, 3, 5), dtype=dt)
    R2 = np.empty((n, 3, 3), dtype=dt)
    P1 = np.empty((n, 3), dtype=dt)
    P = np.empty((n, 3), dtype=dt)
    chain_terms(Q, QD, par, M, H, G, JV, JW, R2, P1, P)

    fw = np.zeros(3, dtype=dt)
    mw = np.zeros(3, dtype=dt)
    rhs = np.zeros(5, dtype=dt)
    Lf = np.zeros((5, 5), dtype=dt)
    D = np.zeros(5, dtype=dt)
    for b in range(n):
        # body wrench -> world frame
        for i in range(3):
            fw[i] = R2[b, i, 0] * U[b, 0] + R2[b, i, 1] * U[b, 1] + R2[b, i, 2] * U[b, 2]
            mw[i] = R2[b, i, 0] * U[b, 3] + R2[b, i, 1] * U[b, 4] + R2[b, i, 2] * U[b, 5]
        for j in range(5):
            acc = TAU[b, j] - H[b, j] - G[b, j]
            for k in range(3):
                acc += JV[b, k, j] * fw[k] + JW[b, k, j] * mw[k]
            rhs[j] = acc

        for j in range(5):
            dj = M[b, j, j]
            for k in range(j):
                dj -= Lf[j, k] * Lf[j, k] * D[k]
            D[j] = dj
            Lf[j, j] = 1.0
            for i in range(j + 1, 5):
                acc = M[b, i, j]
                for k in range(j):
                    acc -= Lf[i, k] * Lf[j, k] * D[k]
                Lf[i, j] = acc / dj
        # forward, diagonal, backward substitution
        for i in range(5):
            acc = rhs[i]
            for k in range(i):
                acc -= Lf[i, k] * rhs[k]
            rhs[i] = acc
        for i in range(5):
            rhs[i] = rhs[i] / D[i]
        for i in range(4, -1, -1):
            acc = rhs[i]
            for k in range(i + 1, 5):
                acc -= Lf[k, i] * rhs[k]
            rhs[i] = acc
        for i in range(5):
            QDD[b, i] = rhs[i]

        dmin = D[0].real
        mmax = M[b, 0, 0].real
        for i in range(1, 5):
            if D[i].real < dmin:
                dmin = D[i].real
            if M[b, i, i].real > mmax:
                mmax = M[b, i, i].real
        if dmin > 0.0:
            COND[b] = mmax / dmin
        else:
            COND[b] = np.inf
