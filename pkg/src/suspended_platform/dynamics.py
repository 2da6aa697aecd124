"""Rigid-body model of a platform hanging from a spherical double pendulum.

Conventions
-----------
* World frame z-up, anchor at the origin, gravity ``(0, 0, -g0)``.
* Link-1 frame ``R1 = Rx(q1) Ry(q2) Rz(q3)``, link-2 frame relative to
  link 1 ``Rx(q4) Ry(q5)``. The platform is rigidly attached to link 2, so
  its orientation is ``R = R1 Rx(q4) Ry(q5)``.
* Both links are massless. A point mass ``m1`` sits at the junction of the
  links, the platform (mass ``m2``, principal inertia ``inertia``) has its
  COM at the end of link 2.
* Body wrench ``u = (f, m)`` is expressed in the platform frame at the COM;
  joint torques are ``tau = J(q).T @ u`` with :func:`body_jacobian`.
* Euler angles are ZYX: ``R = Rz(psi) Ry(theta) Rx(phi)``.

All array functions accept leading batch dimensions and complex input
(complex-step differentiation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import SingularMassMatrixError

NQ = 5
NX = 10
COND_LIMIT = 1e12
_CSTEP = 1e-20


@dataclass(frozen=True)
class PendulumParams:
    L1: float = 0.75
    L2: float = 0.75
    m1: float = 0.2
    m2: float = 4.06
    inertia: tuple[float, float, float] = (0.0646, 0.0646, 0.0682)
    r_arm: float = 0.4
    g0: float = 9.81

    def __post_init__(self):
        vals = [self.L1, self.L2, self.m1, self.m2, *self.inertia, self.r_arm, self.g0]
        if not np.all(np.isfinite(vals)):
            raise ValueError("pendulum parameters must be finite")
        if min(self.L1, self.L2, self.m2, self.g0) <= 0 or self.m1 < 0:
            raise ValueError("L1, L2, m2, g0 must be > 0 and m1 >= 0")
        if len(self.inertia) != 3 or min(self.inertia) <= 0:
            raise ValueError("inertia must be three positive principal moments")
        object.__setattr__(self, "inertia", tuple(float(i) for i in self.inertia))

    @cached_property
    def packed(self) -> np.ndarray:
        return np.array([self.L1, self.L2, self.m1, self.m2, *self.inertia, self.g0])

    def potential_offset(self) -> float:
        """Potential energy constant that puts V = 0 at the hanging equilibrium."""
        return self.g0 * (self.m1 * self.L1 + self.m2 * (self.L1 + self.L2))


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qd: np.ndarray = field(default_factory=lambda: np.zeros(NQ))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        qd = np.asarray(self.qd, dtype=float).reshape(-1)
        if q.shape != (NQ,) or qd.shape != (NQ,):
            raise ValueError("JointState needs 5 angles and 5 rates")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise ValueError("JointState entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qd", qd)

    @classmethod
    def from_vector(cls, x) -> JointState:
        x = np.asarray(x, dtype=float)
        return cls(x[:NQ], x[NQ:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qd])


@dataclass(frozen=True)
class BodyWrench:
    f: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).reshape(3)
        m = np.asarray(self.m, dtype=float).reshape(3)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(m))):
            raise ValueError("wrench entries must be finite")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "m", m)

    @classmethod
    def zero(cls) -> BodyWrench:
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, u) -> BodyWrench:
        u = np.asarray(u, dtype=float)
        return cls(u[:3], u[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.f, self.m])


@dataclass(frozen=True)
class BasePose:
    p: np.ndarray
    R: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    euler: np.ndarray


class ChainTerms(NamedTuple):
    M: np.ndarray
    h: np.ndarray  # C(q, qd) @ qd
    g: np.ndarray
    Jv: np.ndarray  # world linear Jacobian of the platform COM, 3x5
    Jw: np.ndarray  # world angular Jacobian of the platform, 3x5
    R: np.ndarray
    p1: np.ndarray
    p: np.ndarray


def chain_terms(q, qd, params: PendulumParams) -> ChainTerms:
    """Evaluate every configuration-dependent quantity in one kernel call."""
    q = np.asarray(q)
    qd = np.asarray(qd) if qd is not None else np.zeros_like(q)
    q, qd = np.broadcast_arrays(q, qd)
    dtype = np.result_type(q.dtype, qd.dtype, np.float64)
    batch = q.shape[:-1]
    Q = np.ascontiguousarray(q.reshape(-1, NQ), dtype=dtype)
    QD = np.ascontiguousarray(qd.reshape(-1, NQ), dtype=dtype)
    n = Q.shape[0]
    M = np.empty((n, NQ, NQ), dtype)
    H = np.empty((n, NQ), dtype)
    G = np.empty((n, NQ), dtype)
    JV = np.empty((n, 3, NQ), dtype)
    JW = np.empty((n, 3, NQ), dtype)
    R = np.empty((n, 3, 3), dtype)
    P1 = np.empty((n, 3), dtype)
    P = np.empty((n, 3), dtype)
    _kernels.chain_terms(Q, QD, params.packed, M, H, G, JV, JW, R, P1, P)
    return ChainTerms(
        M.reshape(batch + (NQ, NQ)),
        H.reshape(batch + (NQ,)),
        G.reshape(batch + (NQ,)),
        JV.reshape(batch + (3, NQ)),
        JW.reshape(batch + (3, NQ)),
        R.reshape(batch + (3, 3)),
        P1.reshape(batch + (3,)),
        P.reshape(batch + (3,)),
    )


def mass_matrix(q, params: PendulumParams) -> np.ndarray:
    return chain_terms(q, None, params).M


def mass_matrix_partials(q, params: PendulumParams) -> np.ndarray:
    """``dM[..., k, i, j] = dM_ij / dq_k`` by complex step (exact to rounding)."""
    q = np.asarray(q, dtype=float)
    qc = q[..., None, :] + 1j * _CSTEP * np.eye(NQ)
    return mass_matrix(qc, params).imag / _CSTEP


def coriolis_matrix(q, qd, params: PendulumParams) -> np.ndarray:
    """Coriolis matrix from Christoffel symbols of the first kind.

    ``C_ij = sum_k 0.5 (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i) qd_k``, which
    makes ``Mdot - 2C`` skew-symmetric.
    """
    qd = np.asarray(qd, dtype=float)
    dM = mass_matrix_partials(q, params)
    # gamma[i, j, k] from dM[k, i, j], dM[j, i, k] and dM[i, j, k]
    gamma = 0.5 * (np.moveaxis(dM, -3, -1) + np.swapaxes(dM, -3, -2) - dM)
    return np.einsum("...ijk,...k->...ij", gamma, qd)


def gravity_vector(q, params: PendulumParams) -> np.ndarray:
    return chain_terms(q, None, params).g


def potential_energy(q, params: PendulumParams) -> np.ndarray:
    t = chain_terms(q, None, params)
    return params.g0 * (params.m1 * t.p1[..., 2] + params.m2 * t.p[..., 2]) + params.potential_offset()


def total_energy(x, params: PendulumParams) -> np.ndarray:
    """Kinetic plus potential energy, zero at the hanging rest state."""
    x = np.asarray(x, dtype=float)
    q, qd = x[..., :NQ], x[..., NQ:]
    t = chain_terms(q, qd, params)
    kinetic = 0.5 * np.einsum("...i,...ij,...j->...", qd, t.M, qd)
    potential = params.g0 * (params.m1 * t.p1[..., 2] + params.m2 * t.p[..., 2])
    return kinetic + potential + params.potential_offset()


def body_jacobian_from_terms(t: ChainTerms) -> np.ndarray:
    Rt = np.swapaxes(t.R, -1, -2)
    return np.concatenate([Rt @ t.Jv, Rt @ t.Jw], axis=-2)


def body_jacobian(q, params: PendulumParams) -> np.ndarray:
    """6x5 map from joint rates to the platform body twist (v_body, omega_body)."""
    return body_jacobian_from_terms(chain_terms(q, None, params))


def euler_zyx(R) -> np.ndarray:
    """Roll, pitch, yaw with ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
    R = np.asarray(R)
    phi = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    theta = np.arctan2(-R[..., 2, 0], np.hypot(R[..., 0, 0], R[..., 1, 0]))
    psi = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    return np.stack([phi, theta, psi], axis=-1)


def euler_rate_map(R) -> np.ndarray:
    """Matrix T with ``euler_dot = T @ omega_world`` (ZYX), built from R only.

    Written without arctan2 so it stays complex-step differentiable.
    """
    R = np.asarray(R)
    r00, r10, r20 = R[..., 0, 0], R[..., 1, 0], R[..., 2, 0]
    c2 = r00 * r00 + r10 * r10
    c = np.sqrt(c2)
    zero = np.zeros_like(r00)
    row_phi = np.stack([r00 / c2, r10 / c2, zero], axis=-1)
    row_theta = np.stack([-r10 / c, r00 / c, zero], axis=-1)
    row_psi = np.stack([-r20 * r00 / c2, -r20 * r10 / c2, np.ones_like(r00)], axis=-1)
    return np.stack([row_phi, row_theta, row_psi], axis=-2)


def rot_zyx(euler) -> np.ndarray:
    phi, theta, psi = euler
    cx, sx, cy, sy, cz, sz = np.cos(phi), np.sin(phi), np.cos(theta), np.sin(theta), np.cos(psi), np.sin(psi)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def forward_kinematics(state: JointState, params: PendulumParams) -> BasePose:
    t = chain_terms(state.q, state.qd, params)
    omega_world = t.Jw @ state.qd
    return BasePose(
        p=t.p,
        R=t.R,
        v=t.Jv @ state.qd,
        omega=t.R.T @ omega_world,
        euler=euler_zyx(t.R),
    )


def _flat(a, n_last, dtype, batch):
    a = np.asarray(a, dtype=dtype)
    if a.shape[:-1] != batch:
        a = np.broadcast_to(a, batch + (n_last,))
    return np.ascontiguousarray(a.reshape(-1, n_last))


def _wrench_vector(u):
    if isinstance(u, BodyWrench):
        return u.as_vector()
    return np.asarray(u)


def state_derivative(x, u, params: PendulumParams, *, tau=None) -> np.ndarray:
    """``xdot = (qd, M^-1 (J^T u - C qd - g))``.

    ``u`` is a :class:`BodyWrench`, an array of shape (..., 6), or None.
    ``tau`` adds a joint-torque term directly (ideal torque injection).
    Raises :class:`SingularMassMatrixError` when the conditioning estimate
    of M exceeds 1e12.
    """
    x = np.asarray(x)
    u = np.zeros(6) if u is None else _wrench_vector(u)
    tau = np.zeros(NQ) if tau is None else np.asarray(tau)
    dtype = np.result_type(x.dtype, u.dtype, tau.dtype, np.float64)
    batch = x.shape[:-1]
    if u.ndim > 1 or tau.ndim > 1:
        batch = np.broadcast_shapes(batch, u.shape[:-1], tau.shape[:-1])
    X = _flat(x, NX, dtype, batch)
    Q = np.ascontiguousarray(X[:, :NQ])
    QD = np.ascontiguousarray(X[:, NQ:])
    QDD = np.empty_like(Q)
    cond = np.empty(Q.shape[0])
    _kernels.forward_dynamics(Q, QD, _flat(u, 6, dtype, batch), _flat(tau, NQ, dtype, batch),
                              params.packed, QDD, cond)
    if not (cond < COND_LIMIT).all():
        raise SingularMassMatrixError(
            f"mass matrix numerically singular (condition estimate {np.max(cond):.3g})"
        )
    return np.concatenate([QD, QDD], axis=1).reshape(batch + (NX,))


def joint_acceleration(q, qd, tau, params: PendulumParams) -> np.ndarray:
    """Solve ``M qdd = tau - C qd - g``."""
    x = np.concatenate(np.broadcast_arrays(np.asarray(q), np.asarray(qd)), axis=-1)
    return state_derivative(x, None, params, tau=tau)[..., NQ:]


def linearize(x0, u0, params: PendulumParams, selector=None):
    """Jacobians of :func:`state_derivative` by complex step.

    Returns ``(A, B)``; B is 10x6 for the full body wrench or
    ``10 x selector.shape[1]`` when a wrench selector is given.
    """
    x0 = np.asarray(x0, dtype=float)
    u0 = np.zeros(6) if u0 is None else np.asarray(_wrench_vector(u0), dtype=float)
    n_in = 6
    X = np.tile(x0.astype(complex), (NX + n_in, 1))
    U = np.tile(u0.astype(complex), (NX + n_in, 1))
    X[:NX] += 1j * _CSTEP * np.eye(NX)
    U[NX:] += 1j * _CSTEP * np.eye(n_in)
    D = state_derivative(X, U, params).imag / _CSTEP
    A = D[:NX].T
    B = D[NX:].T
    if selector is not None:
        B = B @ np.asarray(selector, dtype=float)
    return A, B


def state_jacobian(x, u, params: PendulumParams) -> np.ndarray:
    """``df/dx`` for a batch of states (leading dims), by complex step."""
    x = np.asarray(x, dtype=float)
    X = x[..., None, :] + 1j * _CSTEP * np.eye(NX)
    U = None
    if u is not None:
        U = np.asarray(_wrench_vector(u), dtype=float)[..., None, :]
    D = state_derivative(X, U, params).imag / _CSTEP
    return np.swapaxes(D, -1, -2)


def derivative_and_jacobian(x, u, params: PendulumParams):
    """``(f(x, u), df/dx)`` from one complex-step evaluation.

    The real part of each perturbed evaluation equals ``f(x, u)`` to
    O(h^2), so the derivative comes for free.
    """
    x = np.asarray(x, dtype=float)
    X = x[..., None, :] + 1j * _CSTEP * np.eye(NX)
    U = None
    if u is not None:
        U = np.asarray(_wrench_vector(u), dtype=float)[..., None, :]
    D = state_derivative(X, U, params)
    return D[..., 0, :].real.copy(), np.swapaxes(D.imag / _CSTEP, -1, -2)


def step_rk4(x, u, dt: float, params: PendulumParams, *, tau=None) -> np.ndarray:
    """Classical RK4 step with the wrench (and torque) held over the step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = state_derivative(x, u, params, tau=tau)
    k2 = state_derivative(x + 0.5 * dt * k1, u, params, tau=tau)
    k3 = state_derivative(x + 0.5 * dt * k2, u, params, tau=tau)
    k4 = state_derivative(x + dt * k3, u, params, tau=tau)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
