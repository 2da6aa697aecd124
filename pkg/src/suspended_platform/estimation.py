"""Continuous-discrete EKF over the 10-dimensional pendulum state.

Prediction integrates the state and the covariance Lyapunov equation
``P' = F P + P F^T + Q`` together with RK4, evaluating ``F = df/dx`` at every
stage. Corrections are applied per sensor channel: only the rows of the
measurement model that belong to the arriving channel are used, so a
channel that did not publish contributes nothing.

The measurement vector stacks the world-frame platform COM velocity and
the ZYX Euler angles of the platform frame. Every function accepts leading
batch dimensions so Monte-Carlo runs can be stepped together.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dynamics import NX, PendulumParams, chain_terms, derivative_and_jacobian, euler_zyx
from .errors import GimbalLockError, InnovationError

NZ = 6
GIMBAL_MARGIN = 1e-6
H_STEP = 1e-6

DEFAULT_Q_PROC = np.diag([1e-6] * 5 + [1e-4] * 5)


class ChannelId(str, enum.Enum):
    VELOCITY = "velocity"
    ORIENTATION = "orientation"


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True, eq=False)
class SensorChannel:
    """One measurement source: its rate, noise and rows of the stacked measurement."""

    id: ChannelId
    rate: float
    R: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "id", ChannelId(self.id))
        R = np.array(self.R, dtype=float)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"channel rate must be positive, got {self.rate}")
        k = len(self.dims)
        if R.shape != (k, k):
            raise ValueError(f"R must be {k}x{k}, got {R.shape}")
        if not np.allclose(R, R.T, rtol=0, atol=1e-15 * max(1.0, np.abs(R).max())):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        if any(d < 0 or d >= NZ for d in self.dims) or len(set(self.dims)) != k:
            raise ValueError(f"invalid measurement rows {self.dims}")

    @property
    def is_angular(self) -> bool:
        return self.id is ChannelId.ORIENTATION


def default_channels(vel_rate=100.0, ori_rate=50.0, vel_var=1e-4, ori_var=1e-5):
    return (
        SensorChannel(ChannelId.VELOCITY, vel_rate, vel_var * np.eye(3), (0, 1, 2)),
        SensorChannel(ChannelId.ORIENTATION, ori_rate, ori_var * np.eye(3), (3, 4, 5)),
    )


@dataclass(frozen=True, eq=False)
class MeasurementPacket:
    t: float
    channel: ChannelId
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "channel", ChannelId(self.channel))
        z = np.array(self.z, dtype=float)
        if z.shape[-1:] != (3,) or not np.isfinite(z).all():
            raise ValueError("measurement must be a finite 3-vector")
        if self.channel is ChannelId.ORIENTATION:
            z = wrap_angle(z)
        object.__setattr__(self, "z", z)


@dataclass(frozen=True, eq=False)
class EkfState:
    x_hat: np.ndarray
    P: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        x = np.array(self.x_hat, dtype=float)
        P = np.array(self.P, dtype=float)
        if x.shape[-1:] != (NX,) or P.shape[-2:] != (NX, NX) or P.shape[:-2] != x.shape[:-1]:
            raise ValueError(f"inconsistent shapes x {x.shape}, P {P.shape}")
        object.__setattr__(self, "x_hat", x)
        object.__setattr__(self, "P", 0.5 * (P + np.swapaxes(P, -1, -2)))


def measurement_model(x, params: PendulumParams, *, check_gimbal: bool = True) -> np.ndarray:
    """``h(x)``: world-frame platform velocity followed by ZYX Euler angles."""
    x = np.asarray(x, dtype=float)
    t = chain_terms(x[..., :5], x[..., 5:], params)
    v = np.einsum("...ij,...j->...i", t.Jv, x[..., 5:])
    if check_gimbal:
        cos_pitch = np.hypot(t.R[..., 0, 0], t.R[..., 1, 0])
        if (cos_pitch < np.sin(GIMBAL_MARGIN)).any():
            raise GimbalLockError("platform pitch within 1e-6 rad of +-pi/2")
    return np.concatenate([v, euler_zyx(t.R)], axis=-1)


def measurement_jacobian(x, params: PendulumParams, step: float = H_STEP) -> np.ndarray:
    """6x10 central-difference Jacobian of :func:`measurement_model`.

    Angle differences are wrapped so the stencil is safe across the +-pi cut.
    """
    x = np.asarray(x, dtype=float)
    E = step * np.eye(NX)
    hp = measurement_model(x[..., None, :] + E, params, check_gimbal=False)
    hm = measurement_model(x[..., None, :] - E, params, check_gimbal=False)
    d = hp - hm
    d[..., 3:] = wrap_angle(d[..., 3:])
    return np.swapaxes(d, -1, -2) / (2 * step)


def ekf_predict(state: EkfState, u, dt: float, Q_proc, params: PendulumParams) -> EkfState:
    """Propagate estimate and covariance over ``dt`` with the wrench held."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    Q = np.asarray(Q_proc, dtype=float)
    x, P = state.x_hat, state.P

    def rates(xs, Ps):
        f, F = derivative_and_jacobian(xs, u, params)
        FP = F @ Ps
        return f, FP + np.swapaxes(FP, -1, -2) + Q

    k1x, k1P = rates(x, P)
    k2x, k2P = rates(x + 0.5 * dt * k1x, P + 0.5 * dt * k1P)
    k3x, k3P = rates(x + 0.5 * dt * k2x, P + 0.5 * dt * k2P)
    k4x, k4P = rates(x + dt * k3x, P + dt * k3P)
    x_new = x + (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
    P_new = P + (dt / 6.0) * (k1P + 2 * k2P + 2 * k3P + k4P)
    return EkfState(x_new, P_new, state.t + dt)


def joseph_correct(x, P, residual, H, R):
    """Kalman correction with a Joseph-form covariance update.

    Returns ``(x', P', K)``. Works for any state and measurement size and
    leading batch dimensions.
    """
    x = np.asarray(x, dtype=float)
    P = np.asarray(P, dtype=float)
    H = np.asarray(H, dtype=float)
    R = np.asarray(R, dtype=float)
    PHt = P @ np.swapaxes(H, -1, -2)
    S = H @ PHt + R
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise InnovationError("innovation covariance is not positive definite") from exc
    if not np.isfinite(L).all():
        raise InnovationError("innovation covariance is not positive definite")
    # K = P H^T S^-1 via two triangular solves on S = L L^T
    Kt = np.linalg.solve(np.swapaxes(L, -1, -2), np.linalg.solve(L, np.swapaxes(PHt, -1, -2)))
    K = np.swapaxes(Kt, -1, -2)
    x_new = x + np.einsum("...ij,...j->...i", K, residual)
    IKH = np.eye(P.shape[-1]) - K @ H
    P_new = IKH @ P @ np.swapaxes(IKH, -1, -2) + K @ R @ Kt
    return x_new, 0.5 * (P_new + np.swapaxes(P_new, -1, -2)), K


def ekf_update(state: EkfState, pkt: MeasurementPacket, channel: SensorChannel,
               params: PendulumParams, *, max_lag: float | None = None) -> EkfState:
    """Correct with one packet, using only the rows of its channel."""
    if pkt.channel is not channel.id:
        raise ValueError(f"packet from {pkt.channel.value} given to {channel.id.value} channel")
    if max_lag is not None and abs(pkt.t - state.t) > max_lag:
        raise ValueError(f"packet at t={pkt.t} is more than {max_lag} s from the estimate")
    rows = list(channel.dims)
    h = measurement_model(state.x_hat, params, check_gimbal=channel.is_angular)[..., rows]
    H = measurement_jacobian(state.x_hat, params)[..., rows, :]
    r = pkt.z - h
    if channel.is_angular:
        r = wrap_angle(r)
    x, P, _ = joseph_correct(state.x_hat, state.P, r, H, channel.R)
    return EkfState(x, P, state.t)


def nees(x_true, state: EkfState) -> np.ndarray:
    """Normalized estimation error squared, ``e^T P^-1 e``."""
    e = np.asarray(x_true, dtype=float) - state.x_hat
    c, low = scipy.linalg.cho_factor(state.P) if state.P.ndim == 2 else (None, None)
    if c is not None:
        return float(e @ scipy.linalg.cho_solve((c, low), e))
    return np.einsum("...i,...i->...", e, np.linalg.solve(state.P, e[..., None])[..., 0])


def ekf_update_joint(state: EkfState, packets, channels, params: PendulumParams) -> EkfState:
    """Single correction with every packet stacked, for packets sharing one timestamp.

    Rows are assembled in a canonical order (by measurement row), so the
    posterior does not depend on the order the packets are listed in.
    """
    if not isinstance(channels, dict):
        channels = {c.id: c for c in channels}
    packets = sorted(packets, key=lambda pk: channels[pk.channel].dims)
    if not packets:
        return state
    if len(packets) == 1:
        return ekf_update(state, packets[0], channels[packets[0].channel], params)
    angular = any(channels[pk.channel].is_angular for pk in packets)
    h_all = measurement_model(state.x_hat, params, check_gimbal=angular)
    H_all = measurement_jacobian(state.x_hat, params)
    rows, res, blocks = [], [], []
    for pk in packets:
        ch = channels[pk.channel]
        r = pk.z - h_all[..., list(ch.dims)]
        res.append(wrap_angle(r) if ch.is_angular else r)
        rows.extend(ch.dims)
        blocks.append(ch.R)
    x, P, _ = joseph_correct(state.x_hat, state.P, np.concatenate(res, axis=-1),
                             H_all[..., rows, :], scipy.linalg.block_diag(*blocks))
    return EkfState(x, P, state.t)


def ekf_step(state: EkfState, u, dt: float, Q_proc, packets, channels, params: PendulumParams) -> EkfState:
    """One filter tick: predict, then correct with whichever packets arrived.

    ``channels`` maps each :class:`ChannelId` to its :class:`SensorChannel`
    (a sequence of channels is accepted too). Packets with equal timestamps
    are fused in one stacked correction; distinct timestamps are applied in
    time order. With no packets the result is the prediction itself.
    """
    if not isinstance(channels, dict):
        channels = {c.id: c for c in channels}
    state = ekf_predict(state, u, dt, Q_proc, params)
    groups: dict[float, list] = {}
    for pkt in packets:
        groups.setdefault(pkt.t, []).append(pkt)
    for t in sorted(groups):
        state = ekf_update_joint(state, groups[t], channels, params)
    return state
