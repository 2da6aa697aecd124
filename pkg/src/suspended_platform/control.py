"""Joint-space LQR damping and task-space PD+ control.

Two task definitions are supported:

* ``Omni5``: platform COM position ``(px, py)`` and ZYX Euler angles
  ``(phi, theta, psi)``. Five coordinates for five joints, so the task
  Jacobian is square.
* ``Under3``: ``(px, py, psi)``. The remaining two directions are described
  by a nullspace velocity ``v_n = N qd`` with ``J M^-1 N^T = 0``, which makes
  the task/nullspace inertia block diagonal.

Time derivatives of Jacobians are taken by complex step along ``qd``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .allocation import BoundedSolution, PlatformConfig, bounded_min_norm
from .dynamics import (
    COND_LIMIT,
    NQ,
    PendulumParams,
    body_jacobian_from_terms,
    chain_terms,
    coriolis_matrix,
    euler_rate_map,
    euler_zyx,
)
from .errors import (
    ActuationDegenerateError,
    NotStabilizableError,
    NumericalError,
    SingularMassMatrixError,
    TaskSingularityError,
)

_CSTEP = 1e-20
CARE_RTOL = 1e-8
SINGULAR_RTOL = 1e-9

DAMPING_Q_HAT = np.diag([200.0, 200.0, 20.0, 0.01, 0.01, 50.0, 50.0, 1.0, 0.01, 0.01])
EXPERIMENT_Q_HAT = np.diag([100.0, 100.0, 0.1, 0.01, 0.01, 1.0, 1.0, 0.1, 1e-4, 1e-4])


# ---------------------------------------------------------------- LQR


@dataclass(frozen=True, eq=False)
class LqrDesign:
    Q_hat: np.ndarray
    R_hat: np.ndarray
    K: np.ndarray
    S: np.ndarray
    residual: float  # relative Riccati residual
    closed_loop_eigs: np.ndarray

    @property
    def spectral_abscissa(self) -> float:
        return float(self.closed_loop_eigs.real.max())


def ctrb_obsv_rank(A, M, *, observability: bool = False, rtol: float = SINGULAR_RTOL) -> int:
    """Numerical rank of the Kalman controllability (or observability) matrix.

    For observability pass the output matrix ``C`` and ``observability=True``.
    Singular values below ``rtol * sigma_max`` count as zero. ``A`` is first
    divided by its spectral radius (a time rescaling, which leaves the exact
    rank unchanged); otherwise the powers ``A^k`` of a system with widely
    spread modes push the slow directions below any relative threshold.
    """
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    if observability:
        A, M = A.T, M.T
    n = A.shape[0]
    if A.shape != (n, n) or M.shape[0] != n:
        raise ValueError(f"inconsistent shapes A {A.shape}, input/output matrix {M.shape}")
    radius = np.abs(np.linalg.eigvals(A)).max(initial=0.0) if n else 0.0
    if radius > 0:
        A = A / radius
    blocks = [M]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    s = np.linalg.svd(np.hstack(blocks), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _unstabilizable_mode(A, B):
    """Eigenvector of a non-decaying mode that B cannot reach, or None (PBH test)."""
    n = A.shape[0]
    w, V = np.linalg.eig(A)
    scale = max(1.0, np.abs(A).max(), np.abs(B).max())
    for lam, v in zip(w, V.T):
        if lam.real < -1e-9 * scale:
            continue
        s = np.linalg.svd(np.hstack([A - lam * np.eye(n), B]), compute_uv=False)
        if s[-1] < 1e-9 * s[0]:
            return lam, v
    return None


def _care_residual(A, B, Q, R, S):
    BtS = B.T @ S
    res = A.T @ S + S @ A - BtS.T @ np.linalg.solve(R, BtS) + Q
    return np.linalg.norm(res) / max(np.linalg.norm(Q), np.finfo(float).tiny)


def solve_care(A, B, Q_hat, R_hat, *, refine_steps: int = 5) -> LqrDesign:
    """Stabilizing solution of ``A^T S + S A - S B R^-1 B^T S + Q = 0``.

    Uses the Schur method on the Hamiltonian pencil, checks the residual and
    refines with Newton-Kleinman steps if it is above ``1e-8 * |Q|``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q_hat, dtype=float)
    R = np.atleast_2d(np.asarray(R_hat, dtype=float))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise ValueError("inconsistent CARE dimensions")
    if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(0.5 * (Q + Q.T)).min() < -1e-12 * max(1.0, np.abs(Q).max()):
        raise ValueError("Q_hat must be symmetric positive semi-definite")
    if not np.allclose(R, R.T) or np.linalg.eigvalsh(0.5 * (R + R.T)).min() <= 0:
        raise ValueError("R_hat must be symmetric positive definite")
    bad = _unstabilizable_mode(A, B)
    if bad is not None:
        raise NotStabilizableError(f"mode at eigenvalue {bad[0]:.6g} is not stabilizable", mode=bad[1])

    if not Q.any() and np.linalg.eigvals(A).real.max() < 0:
        S = np.zeros((n, n))
    else:
        S = scipy.linalg.solve_continuous_are(A, B, Q, R)
    S = 0.5 * (S + S.T)
    residual = _care_residual(A, B, Q, R, S)
    for _ in range(refine_steps):
        if residual < 1e-2 * CARE_RTOL:
            break
        # Newton-Kleinman: solve (A - BK)^T S + S (A - BK) + Q + K^T R K = 0
        K = np.linalg.solve(R, B.T @ S)
        Acl = A - B @ K
        S_new = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        S_new = 0.5 * (S_new + S_new.T)
        r_new = _care_residual(A, B, Q, R, S_new)
        if not r_new < residual:
            break
        S, residual = S_new, r_new
    K = np.linalg.solve(R, B.T @ S)
    eigs = np.linalg.eigvals(A - B @ K)
    if residual > CARE_RTOL or eigs.real.max() >= 0:
        raise NumericalError(
            f"Riccati solution not verified (residual {residual:.3g}, abscissa {eigs.real.max():.3g})"
        )
    return LqrDesign(Q, R, K, S, float(residual), eigs)


def lqr_command(K, x_hat) -> np.ndarray:
    """State feedback ``u = -K x_hat``."""
    K = np.asarray(K, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.shape[-1] != K.shape[1]:
        raise ValueError(f"state has {x_hat.shape[-1]} entries, gain expects {K.shape[1]}")
    return -np.einsum("ij,...j->...i", K, x_hat)


def quadratic_cost(x_traj, u_traj, Q_hat, R_hat, dt: float) -> float:
    """Rectangle-rule value of ``int x^T Q x + u^T R u dt`` over sampled trajectories."""
    x = np.asarray(x_traj)
    u = np.asarray(u_traj)
    return float((np.einsum("ti,ij,tj->", x, Q_hat, x) + np.einsum("ti,ij,tj->", u, R_hat, u)) * dt)


# ---------------------------------------------------------------- task space


class TaskKind(str, enum.Enum):
    OMNI5 = "omni5"
    UNDER3 = "under3"


_EULER_ROWS = {TaskKind.OMNI5: (0, 1, 2), TaskKind.UNDER3: (2,)}


@dataclass(frozen=True, eq=False)
class TaskGains:
    """Diagonal PD gains with a desired task trajectory sample."""

    Kp: np.ndarray
    Kd: np.ndarray
    x_d: np.ndarray | None = None
    xd_d: np.ndarray | None = None
    xdd_d: np.ndarray | None = None

    def __post_init__(self):
        Kp = np.asarray(self.Kp, dtype=float)
        Kd = np.asarray(self.Kd, dtype=float)
        if Kp.ndim != 1 or Kd.shape != Kp.shape:
            raise ValueError("Kp and Kd must be vectors of equal length")
        if (Kp < 0).any() or (Kd < 0).any():
            raise ValueError("gains must be non-negative")
        w = Kp.size
        object.__setattr__(self, "Kp", Kp)
        object.__setattr__(self, "Kd", Kd)
        for name in ("x_d", "xd_d", "xdd_d"):
            v = getattr(self, name)
            v = np.zeros(w) if v is None else np.asarray(v, dtype=float)
            if v.shape != (w,):
                raise ValueError(f"{name} must have {w} entries")
            object.__setattr__(self, name, v)

    @classmethod
    def critically_damped(cls, Kp, **kw) -> "TaskGains":
        """``Kd = 2 sqrt(Kp)``."""
        Kp = np.asarray(Kp, dtype=float)
        return cls(Kp, 2.0 * np.sqrt(Kp), **kw)


def _task_from_terms(t, task: TaskKind):
    """Task Jacobian rows and coordinates from evaluated chain terms."""
    T = euler_rate_map(t.R)
    rows = list(_EULER_ROWS[task])
    J_ang = np.einsum("...ij,...jk->...ik", T[..., rows, :], t.Jw)
    return np.concatenate([t.Jv[..., :2, :], J_ang], axis=-2)


def task_jacobian(q, params: PendulumParams, task) -> np.ndarray:
    """``d x_task / d q`` (w x 5); complex-step safe."""
    return _task_from_terms(chain_terms(q, None, params), TaskKind(task))


def task_coordinates(q, params: PendulumParams, task) -> np.ndarray:
    task = TaskKind(task)
    t = chain_terms(np.asarray(q, dtype=float), None, params)
    eul = euler_zyx(t.R)
    return np.concatenate([t.p[..., :2], eul[..., list(_EULER_ROWS[task])]], axis=-1)


def task_error(x_d, x, task) -> np.ndarray:
    """``x_d - x`` with Euler-angle entries wrapped to (-pi, pi]."""
    e = np.asarray(x_d, dtype=float) - np.asarray(x, dtype=float)
    e[..., 2:] = np.mod(e[..., 2:] + np.pi, 2 * np.pi) - np.pi
    return e


def _inertia_inverse(M):
    if not np.linalg.cond(M) < COND_LIMIT:
        raise SingularMassMatrixError("joint-space inertia is singular at this configuration")
    return np.linalg.inv(M)


def _check_rank(J, what):
    U, s, _ = np.linalg.svd(J)
    if s[-1] < SINGULAR_RTOL * max(1.0, s[0]):
        raise TaskSingularityError(f"{what} lost rank (sigma_min = {s[-1]:.3g})", direction=U[:, -1])


@dataclass(frozen=True, eq=False)
class TaskQuantities:
    """Task-space model ``Lambda xdd + mu xd + rho = F`` at one state."""

    task: TaskKind
    q: np.ndarray
    qd: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    J: np.ndarray
    Jdot: np.ndarray
    M: np.ndarray
    Minv: np.ndarray
    C: np.ndarray
    g: np.ndarray
    J_body: np.ndarray
    Lambda: np.ndarray
    mu: np.ndarray
    rho: np.ndarray


def task_quantities(q, qd, params: PendulumParams, task) -> TaskQuantities:
    """Task Jacobian, its rate, and the projected inertia, Coriolis and gravity terms.

    ``mu = Lambda (J M^-1 C - Jdot) Jbar`` with the dynamically consistent
    inverse ``Jbar = M^-1 J^T Lambda``.
    """
    task = TaskKind(task)
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    t = chain_terms(q, None, params)
    J = _task_from_terms(t, task)
    _check_rank(J, f"{task.value} task Jacobian")
    Jdot = task_jacobian(q + 1j * _CSTEP * qd, params, task).imag / _CSTEP
    M = t.M
    Minv = _inertia_inverse(M)
    C = coriolis_matrix(q, qd, params)
    JMi = J @ Minv
    Lambda = np.linalg.inv(JMi @ J.T)
    Lambda = 0.5 * (Lambda + Lambda.T)
    Jbar = Minv @ J.T @ Lambda
    mu = Lambda @ (JMi @ C - Jdot) @ Jbar
    rho = Lambda @ JMi @ t.g
    x = task_coordinates(q, params, task)
    return TaskQuantities(task, q, qd, x, J @ qd, J, Jdot, M, Minv, C, t.g,
                          body_jacobian_from_terms(t), Lambda, mu, rho)


def pd_plus_omni(tq: TaskQuantities, gains: TaskGains, *, gravity: bool = False) -> np.ndarray:
    """Task force ``F = Lambda xdd_d + mu xd_d + Kd (xd_d - xd) + Kp (x_d - x) [+ rho]``.

    ``gravity=False`` drops ``rho`` for regulation about the hanging origin,
    where gravity itself is restoring.
    """
    if tq.task is not TaskKind.OMNI5:
        raise ValueError("pd_plus_omni needs Omni5 task quantities")
    F = (tq.Lambda @ gains.xdd_d + tq.mu @ gains.xd_d
         + gains.Kd * (gains.xd_d - tq.xd) + gains.Kp * task_error(gains.x_d, tq.x, tq.task))
    return F + tq.rho if gravity else F


def task_acceleration(tq: TaskQuantities, qdd) -> np.ndarray:
    """``xdd = J qdd + Jdot qd``."""
    return tq.J @ np.asarray(qdd, dtype=float) + tq.Jdot @ tq.qd


def error_dynamics_residual(Lambda, mu, gains: TaskGains, x, xd, xdd, task) -> np.ndarray:
    """``Lambda (xdd_d - xdd) + (mu + Kd)(xd_d - xd) + Kp (x_d - x)``.

    Vanishes when a PD+ law acts on the exact task model without input limits.
    """
    return (Lambda @ (gains.xdd_d - xdd) + (mu + np.diag(gains.Kd)) @ (gains.xd_d - xd)
            + gains.Kp * task_error(gains.x_d, x, task))


def omni_thrusts(F, tq: TaskQuantities, config: PlatformConfig, *, warm: BoundedSolution | None = None) -> BoundedSolution:
    """Minimum-norm thrusts with ``J_body^T A F_m = J_task^T F`` and ``0 <= F_m <= f_max``."""
    A_eff = tq.J_body.T @ config.body_allocation
    return bounded_min_norm(A_eff, tq.J.T @ np.asarray(F, dtype=float), config.f_max, warm=warm)


def ideal_omni_wrench(F, tq: TaskQuantities) -> np.ndarray:
    """Least-norm body wrench with ``J_body^T u = J_task^T F`` (no thrust limits)."""
    u, *_ = np.linalg.lstsq(tq.J_body.T, tq.J.T @ np.asarray(F, dtype=float), rcond=None)
    return u


# ---------------------------------------------------------------- underactuated


def _chol2_inv(G):
    """Inverse of the lower Cholesky factor of a 2x2 SPD matrix, written out (complex-step safe)."""
    a = np.sqrt(G[0, 0])
    b = G[1, 0] / a
    c = np.sqrt(G[1, 1] - b * b)
    zero = np.zeros_like(a)
    return np.array([[1.0 / a, zero], [-b / (a * c), 1.0 / c]])


def _nullspace_from_basis(q, params, Z0):
    """``N`` built from the fixed basis ``Z0`` projected onto null(J M^-1)."""
    t = chain_terms(q, None, params)
    J = _task_from_terms(t, TaskKind.UNDER3)
    Minv = np.linalg.inv(t.M)
    JMi = J @ Minv
    Lam = np.linalg.inv(JMi @ J.T)
    Z = Z0 - J.T @ (Lam @ (JMi @ Z0))
    G = Z.T @ Minv @ Z
    return _chol2_inv(G) @ Z.T


def _null_basis(q, params):
    t = chain_terms(q, None, params)
    J = _task_from_terms(t, TaskKind.UNDER3)
    _check_rank(J, "under3 task Jacobian")
    W = J @ _inertia_inverse(t.M)
    _, _, Vt = np.linalg.svd(W)
    return Vt[3:].T.copy()


def nullspace_operator(q, params: PendulumParams, task=TaskKind.UNDER3) -> np.ndarray:
    """2x5 operator with ``J M^-1 N^T = 0`` and ``N M^-1 N^T = I``.

    Built from the SVD of ``J M^-1`` (no continuity between calls).
    """
    if TaskKind(task) is not TaskKind.UNDER3:
        raise ValueError("a nullspace operator exists only for the Under3 task")
    q = np.asarray(q, dtype=float)
    return _nullspace_from_basis(q, params, _null_basis(q, params))


@dataclass(frozen=True, eq=False)
class TaskDecomposition:
    """Inertially decoupled task/nullspace model of the Under3 task."""

    q: np.ndarray
    qd: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    v_n: np.ndarray
    J_task: np.ndarray
    N_op: np.ndarray
    J_body: np.ndarray
    M: np.ndarray
    Lambda_full: np.ndarray  # 5x5 inertia in (x, v_n) coordinates
    mu_full: np.ndarray
    rho_full: np.ndarray

    @property
    def Lambda_x(self):
        return self.Lambda_full[:3, :3]

    @property
    def Lambda_n(self):
        return self.Lambda_full[3:, 3:]

    @property
    def Lambda_xn(self):
        return self.Lambda_full[:3, 3:]

    @property
    def mu_x(self):
        return self.mu_full[:3, :3]

    @property
    def mu_xn(self):
        return self.mu_full[:3, 3:]

    @property
    def mu_nx(self):
        return self.mu_full[3:, :3]

    @property
    def mu_n(self):
        return self.mu_full[3:, 3:]

    @property
    def rho_x(self):
        return self.rho_full[:3]

    @property
    def rho_n(self):
        return self.rho_full[3:]


def task_decomposition(q, qd, params: PendulumParams) -> TaskDecomposition:
    """Block form ``diag(Lx, Ln) [xdd; vn_dot] + mu [xd; vn] + rho = [F_x; F_n]``."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    Z0 = _null_basis(q, params)

    def extended(qq):
        J = task_jacobian(qq, params, TaskKind.UNDER3)
        return np.vstack([J, _nullspace_from_basis(qq, params, Z0)])

    t = chain_terms(q, None, params)
    Jx = extended(q)
    Jx_dot = extended(q + 1j * _CSTEP * qd).imag / _CSTEP
    Minv = _inertia_inverse(t.M)
    C = coriolis_matrix(q, qd, params)
    JMi = Jx @ Minv
    Lam = np.linalg.inv(JMi @ Jx.T)
    Lam = 0.5 * (Lam + Lam.T)
    Jx_inv = np.linalg.inv(Jx)
    mu = Lam @ (JMi @ C - Jx_dot) @ Jx_inv
    rho = Lam @ JMi @ t.g
    vel = Jx @ qd
    return TaskDecomposition(
        q, qd, task_coordinates(q, params, TaskKind.UNDER3), vel[:3], vel[3:],
        Jx[:3], Jx[3:], body_jacobian_from_terms(t), t.M, Lam, mu, rho,
    )


def pd_plus_under(dec: TaskDecomposition, gains: TaskGains, *, gravity: bool = False) -> np.ndarray:
    """Task force with the cross-coupling feedforward ``mu_xn v_n``."""
    F = (dec.Lambda_x @ gains.xdd_d + dec.mu_x @ gains.xd_d
         + gains.Kd * (gains.xd_d - dec.xd)
         + gains.Kp * task_error(gains.x_d, dec.x, TaskKind.UNDER3)
         + dec.mu_xn @ dec.v_n)
    return F + dec.rho_x if gravity else F


def resolve_actuation(F_x, dec: TaskDecomposition, config: PlatformConfig, *, cond_limit: float = 1e12):
    """Solve ``[J_body^T B, -N^T] [u_p; F_n] = J_task^T F_x`` for the platform wrench.

    Returns ``(u_p, F_n)``; ``F_n`` is the nullspace force the platform
    induces while producing the task force.
    """
    F_x = np.asarray(F_x, dtype=float)
    w = config.n_wrench
    S = np.hstack([dec.J_body.T @ config.B_sel, -dec.N_op.T])
    if S.shape != (NQ, NQ):
        raise ValueError(f"platform with {w} wrench components cannot resolve a 3-D task")
    if np.linalg.cond(S) > cond_limit:
        raise ActuationDegenerateError("stacked actuation/nullspace matrix is singular")
    sol = np.linalg.solve(S, dec.J_task.T @ F_x)
    return sol[:w], sol[w:]
