"""Independent reference computations used only by the tests.

The symbolic model is built straight from rotation matrices and position
vectors (Jacobians by symbolic differentiation, body rates from
``R^T dR/dt``); it shares no code with the compiled kernel.
"""

import functools
import itertools

import numpy as np
import sympy as sp


def _rx(a):
    return sp.Matrix([[1, 0, 0], [0, sp.cos(a), -sp.sin(a)], [0, sp.sin(a), sp.cos(a)]])


def _ry(a):
    return sp.Matrix([[sp.cos(a), 0, sp.sin(a)], [0, 1, 0], [-sp.sin(a), 0, sp.cos(a)]])


def _rz(a):
    return sp.Matrix([[sp.cos(a), -sp.sin(a), 0], [sp.sin(a), sp.cos(a), 0], [0, 0, 1]])


@functools.lru_cache(maxsize=None)
def symbolic_model():
    """Lambdified ``M(q, par)``, ``V(q, par)``, ``p(q, par)``, ``R(q)``.

    ``par = (L1, L2, m1, m2, Ixx, Iyy, Izz, g0)``.
    """
    q = sp.symbols("q1:6")
    L1, L2, m1, m2, Ixx, Iyy, Izz, g0 = par = sp.symbols("L1 L2 m1 m2 Ixx Iyy Izz g0")
    R1 = _rx(q[0]) * _ry(q[1]) * _rz(q[2])
    R2 = R1 * _rx(q[3]) * _ry(q[4])
    p1 = R1 * sp.Matrix([0, 0, -L1])
    p = p1 + R2 * sp.Matrix([0, 0, -L2])
    J1 = p1.jacobian(q)
    Jp = p.jacobian(q)
    cols = []
    for i in range(5):
        S = R2.T * sp.diff(R2, q[i])
        cols.append(sp.Matrix([S[2, 1], S[0, 2], S[1, 0]]))
    Jw = sp.Matrix.hstack(*cols)
    Ib = sp.diag(Ixx, Iyy, Izz)
    M = m1 * J1.T * J1 + m2 * Jp.T * Jp + Jw.T * Ib * Jw
    V = g0 * (m1 * p1[2] + m2 * p[2])
    args = (q, par)
    return (
        sp.lambdify(args, M, "numpy", cse=True),
        sp.lambdify(args, V, "numpy"),
        sp.lambdify(args, p, "numpy"),
        sp.lambdify((q,), R2, "numpy"),
    )


@functools.lru_cache(maxsize=None)
def symbolic_position_jacobian():
    """Lambdified ``dp/dq (q, par)`` of the platform COM, by symbolic differentiation."""
    q = sp.symbols("q1:6")
    L1, L2 = sp.symbols("L1 L2")
    par = (L1, L2) + sp.symbols("m1 m2 Ixx Iyy Izz g0")
    R1 = _rx(q[0]) * _ry(q[1]) * _rz(q[2])
    R2 = R1 * _rx(q[3]) * _ry(q[4])
    p = R1 * sp.Matrix([0, 0, -L1]) + R2 * sp.Matrix([0, 0, -L2])
    return sp.lambdify((q, par), p.jacobian(q), "numpy", cse=True)


@functools.lru_cache(maxsize=None)
def planar_model():
    """Euler-Lagrange terms of the planar (q2, q5) sub-case.

    Returns lambdified ``M(q2, q5)``, ``h(q2, q5, qd2, qd5)`` (Coriolis and
    centrifugal vector) and ``g(q2, q5)``, each taking ``par`` last.
    """
    th1, th2, w1, w2 = sp.symbols("th1 th2 w1 w2")
    L1, L2, m1, m2, Ixx, Iyy, Izz, g0 = par = sp.symbols("L1 L2 m1 m2 Ixx Iyy Izz g0")
    t = sp.symbols("t")
    a = sp.Function("a")(t)
    b = sp.Function("b")(t)
    # rotation about +y maps -z to -x: x = -L sin, z = -L cos
    x1, z1 = -L1 * sp.sin(a), -L1 * sp.cos(a)
    x2, z2 = x1 - L2 * sp.sin(a + b), z1 - L2 * sp.cos(a + b)
    T = (
        sp.Rational(1, 2) * m1 * (sp.diff(x1, t) ** 2 + sp.diff(z1, t) ** 2)
        + sp.Rational(1, 2) * m2 * (sp.diff(x2, t) ** 2 + sp.diff(z2, t) ** 2)
        + sp.Rational(1, 2) * Iyy * sp.diff(a + b, t) ** 2
    )
    V = g0 * (m1 * z1 + m2 * z2)
    Lag = T - V
    eqs = []
    for c in (a, b):
        eqs.append(sp.diff(sp.diff(Lag, sp.diff(c, t)), t) - sp.diff(Lag, c))
    acc = {sp.diff(a, t, 2): 0, sp.diff(b, t, 2): 0}
    subs = {sp.diff(a, t): w1, sp.diff(b, t): w2}
    h_and_g = [sp.simplify(e.subs(acc).subs(subs).subs({a: th1, b: th2})) for e in eqs]
    g = [e.subs({w1: 0, w2: 0}) for e in h_and_g]
    h = [sp.simplify(hg - gg) for hg, gg in zip(h_and_g, g)]
    Mpl = sp.Matrix(
        [[sp.diff(e, sp.diff(c, t, 2)) for c in (a, b)] for e in eqs]
    ).subs(subs).subs({a: th1, b: th2})
    return (
        sp.lambdify((th1, th2, par), Mpl, "numpy"),
        sp.lambdify((th1, th2, w1, w2, par), h, "numpy"),
        sp.lambdify((th1, th2, par), g, "numpy"),
    )


def fd_jacobian(f, x, h=1e-6):
    """Central finite-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    J = np.zeros(f0.shape + x.shape)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        J[..., i] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return J


def box_projection_oracle(A, b, lo, hi):
    """Minimum-norm solution of ``A x = b`` with ``lo <= x <= hi`` by enumeration.

    Tries every assignment of variables to {free, at lower, at upper};
    for each, solves the equality-constrained minimum-norm problem on the
    free set and keeps the best candidate that is feasible. Exponential,
    only for n <= 8.
    """
    A = np.asarray(A, dtype=float)
    m, n = A.shape
    best, best_norm = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        x = np.zeros(n)
        free = [i for i in range(n) if pattern[i] == 0]
        for i in range(n):
            if pattern[i] == 1:
                x[i] = lo[i]
            elif pattern[i] == 2:
                x[i] = hi[i]
        r = b - A @ x
        if free:
            Af = A[:, free]
            xf, *_ = np.linalg.lstsq(Af, r, rcond=None)
            x[free] = xf
        if np.linalg.norm(A @ x - b) > 1e-9 * max(1.0, np.linalg.norm(b)):
            continue
        if np.any(x < lo - 1e-10) or np.any(x > hi + 1e-10):
            continue
        nx = np.linalg.norm(x)
        if nx < best_norm:
            best, best_norm = x, nx
    return best
