"""Actuation models: allocation matrices, bounded thrust allocation, PWM and energy.

Thrust allocation is solved in two phases. A bounded-variable least-squares
pass finds the achievable wrench closest to the command; if the command is
reachable it is used as-is, otherwise the closest achievable wrench becomes
the target and the result is flagged as saturated. A primal active-set
method then picks the minimum-norm thrust vector producing that target
inside the box ``0 <= F <= f_max``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import lsq_linear

from .errors import NumericalError


class PlatformKind(str, enum.Enum):
    OMNIDIRECTIONAL = "omnidirectional"
    PLANAR_THRUST = "planar-thrust"
    MINIMAL_ACTUATED = "minimal-actuated"


# Scaled-down eight-rotor omnidirectional layout; rows (Fx, Fy, Fz, Mx, My, Mz).
_A_OMNI = np.array([
    [0.57, -0.81, -0.57, 0.0, -0.57, 0.81, 0.57, 0.0],
    [-0.57, 0.0, -0.57, 0.81, 0.57, 0.0, 0.57, -0.81],
    [0.6, 0.6, -0.6, -0.59, 0.6, 0.59, -0.6, -0.59],
    [0.33, 0.46, -0.33, 0.0, -0.33, -0.46, 0.33, 0.46],
    [-0.33, 0.0, -0.33, -0.46, 0.33, 0.0, 0.33, 0.46],
    [-0.59, 0.6, 0.59, -0.5, -0.59, 0.6, 0.59, -0.6],
])

# Six in-plane rotors at +-90 deg installation; rows (Fx, Fy, Mz).
_A_PLANAR = np.array([
    [1.0, 1.0, -0.5, -0.5, -0.5, -0.5],
    [0.0, 0.0, 0.86, 0.86, -0.86, -0.86],
    [0.4, -0.4, 0.4, -0.4, -0.4, 0.4],
])

# Four in-plane rotors; rows (Fx, Fy, Mz).
_A_MINIMAL = np.array([
    [0.0, 1.0, 0.0, -1.0],
    [-1.0, 0.0, 1.0, 0.0],
    [-0.4, 0.4, -0.4, 0.4],
])

F_MAX = 9.0
R_ARM = 0.4

# body wrench components (Fx, Fy, Mz) inside (f, m)
PLANAR_COMPONENTS = (0, 1, 5)


def wrench_selector(components) -> np.ndarray:
    """6 x w matrix whose columns are the standard basis vectors ``e_c``."""
    B = np.zeros((6, len(components)))
    for col, c in enumerate(components):
        B[c, col] = 1.0
    return B


@dataclass(frozen=True, eq=False)
class PlatformConfig:
    """Rotor layout of one platform.

    ``A`` maps the ``n_motors`` thrusts to the ``w`` wrench components that
    ``B_sel`` embeds into the full body wrench ``(f, m)``.
    """

    kind: PlatformKind
    A: np.ndarray
    B_sel: np.ndarray
    f_max: float = F_MAX
    r_arm: float = R_ARM

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B_sel, dtype=float)
        object.__setattr__(self, "kind", PlatformKind(self.kind))
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B_sel", B)
        if A.ndim != 2 or not np.isfinite(A).all():
            raise ValueError("allocation matrix must be a finite 2-D array")
        w, n = A.shape
        if not (np.isfinite(self.f_max) and self.f_max > 0):
            raise ValueError(f"f_max must be positive, got {self.f_max}")
        if not (np.isfinite(self.r_arm) and self.r_arm > 0):
            raise ValueError(f"r_arm must be positive, got {self.r_arm}")
        if n < w:
            raise ValueError(f"{n} motors cannot span {w} wrench components")
        if np.linalg.matrix_rank(A) != w:
            raise ValueError("allocation matrix must have full row rank")
        if B.shape != (6, w):
            raise ValueError(f"B_sel must be 6x{w}, got {B.shape}")
        ones = np.isclose(B, 1.0)
        if not (ones | (B == 0)).all() or not (ones.sum(axis=0) == 1).all():
            raise ValueError("B_sel columns must be standard basis vectors")
        if len(set(np.argmax(B, axis=0))) != w:
            raise ValueError("B_sel columns must be distinct")

    @property
    def n_motors(self) -> int:
        return self.A.shape[1]

    @property
    def n_wrench(self) -> int:
        return self.A.shape[0]

    @property
    def components(self) -> tuple[int, ...]:
        """Indices of the realized components inside ``(f, m)``."""
        return tuple(int(i) for i in np.argmax(self.B_sel, axis=0))

    @property
    def body_allocation(self) -> np.ndarray:
        """6 x n map from thrusts to the full body wrench, ``B_sel @ A``."""
        return self.B_sel @ self.A

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "A": self.A.tolist(),
            "components": list(self.components),
            "f_max": float(self.f_max),
            "r_arm": float(self.r_arm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PlatformConfig":
        return cls(
            kind=d["kind"],
            A=np.asarray(d["A"], dtype=float),
            B_sel=wrench_selector(d["components"]),
            f_max=float(d.get("f_max", F_MAX)),
            r_arm=float(d.get("r_arm", R_ARM)),
        )


def builtin_platform(kind, *, f_max: float = F_MAX) -> PlatformConfig:
    """One of the three reference platforms."""
    kind = PlatformKind(kind)
    if kind is PlatformKind.OMNIDIRECTIONAL:
        return PlatformConfig(kind, _A_OMNI, np.eye(6), f_max=f_max)
    A = _A_PLANAR if kind is PlatformKind.PLANAR_THRUST else _A_MINIMAL
    return PlatformConfig(kind, A, wrench_selector(PLANAR_COMPONENTS), f_max=f_max)


def wrench_of_thrusts(thrusts, config: PlatformConfig) -> np.ndarray:
    """``A @ F`` over any leading batch dimensions."""
    F = np.asarray(thrusts, dtype=float)
    if F.shape[-1:] != (config.n_motors,):
        raise ValueError(f"expected {config.n_motors} thrusts, got shape {F.shape}")
    return F @ config.A.T


@dataclass(frozen=True, eq=False)
class BoundedSolution:
    x: np.ndarray
    target: np.ndarray  # wrench actually realized (A @ x up to round-off)
    saturated: bool
    kkt_residual: float
    iterations: int
    working: np.ndarray  # -1 at lower bound, +1 at upper, 0 free


@dataclass(frozen=True, eq=False)
class MotorCommand:
    """Per-motor thrusts with their PWM duty and the wrench they realize."""

    thrusts: np.ndarray
    pwm: np.ndarray
    wrench: np.ndarray
    saturated: bool = False
    kkt_residual: float = 0.0
    requested: np.ndarray = field(default=None, repr=False)
    solution: BoundedSolution | None = field(default=None, repr=False)


@njit(cache=True)
def _min_norm_kkt(A, b, x, lo, hi, work, lam):
    """Largest violation among the optimality conditions of the box QP, scaled."""
    m, n = A.shape
    worst = 0.0
    scale = 1.0
    for k in range(m):
        acc = -b[k]
        for j in range(n):
            acc += A[k, j] * x[j]
        worst = max(worst, abs(acc))
        scale = max(scale, abs(b[k]))
    for j in range(n):
        scale = max(scale, abs(x[j]))
        worst = max(worst, lo[j] - x[j], x[j] - hi[j])
        g = x[j]  # signed bound multiplier
        for k in range(m):
            g -= A[k, j] * lam[k]
        if work[j] == 0:
            worst = max(worst, abs(g))
        elif work[j] < 0:
            worst = max(worst, -g)
        else:
            worst = max(worst, g)
    return worst / scale


@njit(cache=True)
def _semidef_solve(G, r, out):
    """Solve with a factor from the semidefinite Cholesky; zero pivots give zero."""
    m = r.shape[0]
    for k in range(m):
        if G[k, k] == 0.0:
            out[k] = 0.0
            continue
        acc = r[k]
        for l in range(k):
            acc -= G[k, l] * out[l]
        out[k] = acc / G[k, k]
    for k in range(m - 1, -1, -1):
        if G[k, k] == 0.0:
            out[k] = 0.0
            continue
        acc = out[k]
        for l in range(k + 1, m):
            acc -= G[l, k] * out[l]
        out[k] = acc / G[k, k]


@njit(cache=True)
def _active_set_kernel(A, b, lo, hi, x, work, tol, max_iter, lam):
    """Primal active-set iterations for ``min |x|^2/2, A x = b, lo <= x <= hi``.

    ``x`` and ``work`` (-1 lower, +1 upper, 0 free) are updated in place.
    Returns the iteration count, or a negative code: -2 equality
    unattainable, -3 iteration limit.
    """
    m, n = A.shape
    scale = 1.0
    for i in range(n):
        scale = max(scale, abs(hi[i]))
    for k in range(m):
        scale = max(scale, abs(b[k]))
    G = np.empty((m, m))
    r = np.empty(m)
    p = np.empty(n)
    res = np.empty(m)
    dlam = np.empty(m)
    for it in range(1, max_iter + 1):
        # normal equations of the equality on the free set
        for k in range(m):
            r[k] = b[k]
            for l in range(m):
                G[k, l] = 0.0
        for j in range(n):
            if work[j] == 0:
                for k in range(m):
                    for l in range(m):
                        G[k, l] += A[k, j] * A[l, j]
            else:
                for k in range(m):
                    r[k] -= A[k, j] * x[j]
        # semidefinite Cholesky solve of G lam = r; dependent rows get lam = 0,
        # which still solves a consistent system and leaves A_free^T lam unique
        diag = 0.0
        for k in range(m):
            diag = max(diag, G[k, k])
        if diag == 0.0:
            diag = 1.0
        for k in range(m):
            acc = G[k, k]
            for l in range(k):
                acc -= G[k, l] * G[k, l]
            if acc <= 1e-11 * diag:
                for i in range(k, m):
                    G[i, k] = 0.0
                continue
            G[k, k] = np.sqrt(acc)
            for i in range(k + 1, m):
                acc = G[i, k]
                for l in range(k):
                    acc -= G[i, l] * G[k, l]
                G[i, k] = acc / G[k, k]
        _semidef_solve(G, r, lam)
        # one refinement pass on the free-set equality; the normal equations
        # square the conditioning and leave round-off directions otherwise
        for k in range(m):
            acc = r[k]
            for j in range(n):
                if work[j] == 0:
                    aj = 0.0
                    for l in range(m):
                        aj += A[l, j] * lam[l]
                    acc -= A[k, j] * aj
            res[k] = acc
        _semidef_solve(G, res, dlam)
        for k in range(m):
            lam[k] += dlam[k]

        pmax = 0.0
        for j in range(n):
            p[j] = 0.0
            if work[j] == 0:
                acc = 0.0
                for k in range(m):
                    acc += A[k, j] * lam[k]
                p[j] = acc - x[j]
                pmax = max(pmax, abs(p[j]))

        if pmax <= tol * scale:
            for j in range(n):
                x[j] = min(max(x[j] + p[j], lo[j]), hi[j])
            for k in range(m):
                acc = -b[k]
                for j in range(n):
                    acc += A[k, j] * x[j]
                if abs(acc) > 1e3 * tol * scale:
                    return -2
            # release a bound with a wrong-signed multiplier; the lowest index
            # wins (Bland's rule) so degenerate vertices cannot cycle
            jw = -1
            for j in range(n):
                if work[j] != 0:
                    g = x[j]
                    for k in range(m):
                        g -= A[k, j] * lam[k]
                    v = -g if work[j] < 0 else g
                    if v > tol * scale:
                        jw = j
                        break
            if jw < 0:
                return it
            work[jw] = 0
            continue

        # longest step keeping the free variables inside the box
        # (ties go to the lowest index; round-off components of p are ignored
        # so a nearly dependent bound never enters the working set)
        pz = 1e-10 * pmax
        alpha, block, side = 1.0, -1, 0
        for j in range(n):
            if work[j] == 0:
                if p[j] < -pz:
                    t = max((lo[j] - x[j]) / p[j], 0.0)
                    if t < alpha:
                        alpha, block, side = t, j, -1
                elif p[j] > pz:
                    t = max((hi[j] - x[j]) / p[j], 0.0)
                    if t < alpha:
                        alpha, block, side = t, j, 1
        alpha = max(alpha, 0.0)
        for j in range(n):
            x[j] = min(max(x[j] + alpha * p[j], lo[j]), hi[j])
        if block >= 0:
            work[block] = side
            x[block] = lo[block] if side < 0 else hi[block]
    return -3


def _initial_working_set(A, x, lo, hi, tol):
    """Bounds touched by ``x``, added while ``A`` on the free set keeps full row rank."""
    m, n = A.shape
    work = np.zeros(n, dtype=np.int64)
    gap = np.minimum(x - lo, hi - x)
    for i in np.argsort(gap):
        if gap[i] > tol:
            break
        trial = work.copy()
        trial[i] = -1
        if np.linalg.matrix_rank(A[:, trial == 0]) < m:
            continue
        if x[i] - lo[i] <= hi[i] - x[i]:
            work[i], x[i] = -1, lo[i]
        else:
            work[i], x[i] = 1, hi[i]
    return work


def min_norm_in_box(A, b, lo, hi, x0=None, *, working=None, max_iter=None, tol=1e-12):
    """Solve ``min 1/2 |x|^2  s.t.  A x = b,  lo <= x <= hi`` by primal active set.

    ``x0`` must lie in the box; it need not satisfy the equality, which the
    first unblocked step restores. ``working`` optionally seeds the active
    set as an int array (-1 at lower, +1 at upper, 0 free). Returns ``(x,
    lam, working, iterations)``, or ``None`` when the iteration cannot meet
    the equality (infeasible target or a bad seed).
    """
    A = np.ascontiguousarray(A, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    m, n = A.shape
    lo = np.ascontiguousarray(np.broadcast_to(np.asarray(lo, dtype=float), (n,)))
    hi = np.ascontiguousarray(np.broadcast_to(np.asarray(hi, dtype=float), (n,)))
    x = np.clip(np.zeros(n) if x0 is None else np.asarray(x0, dtype=float), lo, hi)
    max_iter = 10 * (n + m) + 20 if max_iter is None else max_iter
    if working is None:
        scale = max(1.0, np.abs(hi).max(), np.abs(b).max(initial=0.0))
        work = _initial_working_set(A, x, lo, hi, tol * scale)
    else:
        work = np.array(working, dtype=np.int64)
        x[work < 0], x[work > 0] = lo[work < 0], hi[work > 0]
    lam = np.zeros(m)
    it = _active_set_kernel(A, b, lo, hi, x, work, tol, max_iter, lam)
    if it < 0:
        return None
    return x, lam, work, it


def bounded_min_norm(A, b, f_max, *, warm=None, sat_tol=1e-9) -> BoundedSolution:
    """Minimum-norm ``x`` in ``[0, f_max]`` reproducing ``b``, or the closest wrench.

    When ``A x = b`` has no solution inside the box, the target is replaced
    by the least-squares-closest achievable wrench and ``saturated`` is set.
    ``warm`` is a previous :class:`BoundedSolution`; its point and active set
    seed the search, and any failure falls back to the cold path.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if not np.isfinite(b).all():
        raise ValueError("wrench command must be finite")
    n = A.shape[1]
    lo, hi = np.zeros(n), np.full(n, float(f_max))
    if not b.any():
        return BoundedSolution(np.zeros(n), np.zeros_like(b), False, 0.0, 0,
                               np.full(n, -1, dtype=np.int8))

    if warm is not None and warm.x.shape == (n,):
        # lean path: seed the kernel straight from the previous active set
        work = warm.working.astype(np.int64)
        x = np.where(work < 0, 0.0, np.where(work > 0, hi, warm.x))
        lam = np.zeros(A.shape[0])
        Ac = np.ascontiguousarray(A)
        it = _active_set_kernel(Ac, np.ascontiguousarray(b), lo, hi, x, work, 1e-12,
                                10 * (n + A.shape[0]) + 20, lam)
        if it >= 0:
            return _finish(Ac, b, lo, hi, (x, lam, work, it), False)

    ls = lsq_linear(A, b, bounds=(lo, hi), method="bvls", tol=1e-14, lsmr_tol=None)
    x0 = np.clip(ls.x, lo, hi)
    achieved = A @ x0
    saturated = np.linalg.norm(achieved - b) > sat_tol * max(1.0, np.linalg.norm(b))
    target = achieved if saturated else b
    res = min_norm_in_box(A, target, lo, hi, x0)
    if res is None:
        raise NumericalError("active-set allocation failed to converge")
    return _finish(A, target, lo, hi, res, bool(saturated))


def _finish(A, target, lo, hi, res, saturated):
    x, lam, work, it = res
    kkt = _min_norm_kkt(A, target, x, lo, hi, work, lam)
    return BoundedSolution(x, A @ x, saturated, float(kkt), it, work.astype(np.int8))


def allocate_thrusts(u_cmd, config: PlatformConfig, *, warm: MotorCommand | None = None) -> MotorCommand:
    """Minimum-norm bounded thrusts realizing ``u_cmd`` (w components).

    Out-of-reach commands are not clipped per motor; the closest achievable
    wrench is realized and ``saturated`` is reported. Passing the previous
    command as ``warm`` speeds up closed-loop use without changing the result.
    """
    u = np.asarray(u_cmd, dtype=float)
    if u.shape != (config.n_wrench,):
        raise ValueError(f"expected {config.n_wrench} wrench components, got shape {u.shape}")
    sol = bounded_min_norm(config.A, u, config.f_max,
                           warm=None if warm is None else warm.solution)
    return MotorCommand(
        thrusts=sol.x,
        pwm=pwm_of_thrust(sol.x, config),
        wrench=sol.target,
        saturated=sol.saturated,
        kkt_residual=sol.kkt_residual,
        requested=u,
        solution=sol,
    )


def pwm_of_thrust(f, config: PlatformConfig | None = None, *, f_max: float | None = None):
    """Normalized PWM for thrust ``f`` assuming thrust grows with speed squared."""
    if f_max is None:
        f_max = config.f_max if config is not None else F_MAX
    f = np.asarray(f, dtype=float)
    slack = 1e-9 * f_max
    if not (f.min(initial=0.0) >= -slack and f.max(initial=0.0) <= f_max + slack):
        raise ValueError(f"thrust outside [0, {f_max}]")
    return np.sqrt(np.clip(f, 0.0, f_max) / f_max)


def energy_estimate(thrusts, pwm, dt: float) -> float:
    """``sum_t sum_i F_i(t) pwm_i(t) dt`` over a uniformly sampled log (T x n)."""
    F = np.asarray(thrusts, dtype=float)
    P = np.asarray(pwm, dtype=float)
    if F.size == 0:
        raise ValueError("empty thrust log")
    if F.shape != P.shape:
        raise ValueError(f"thrust and pwm logs differ in shape: {F.shape} vs {P.shape}")
    if not dt > 0:
        raise ValueError(f"sampling interval must be positive, got {dt}")
    return float(np.sum(F * P) * dt)
