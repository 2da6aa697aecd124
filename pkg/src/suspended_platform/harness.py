"""Closed-loop runs, metrics, platform comparison and file output.

The plant is integrated with RK4 at ``dt_sim``; the controller, the
estimator and thrust allocation run every ``dt_ctrl`` with a zero-order
hold in between. All randomness comes from :func:`noise_stream`, keyed by
``(seed, channel, run, tick)``, so a run is bit-reproducible and each noise
channel is independent of the order in which others are drawn.
"""

from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocation import (
    BoundedSolution,
    MotorCommand,
    PlatformConfig,
    PlatformKind,
    allocate_thrusts,
    builtin_platform,
    pwm_of_thrust,
)
from .control import (
    LqrDesign,
    TaskGains,
    TaskKind,
    ctrb_obsv_rank,
    ideal_omni_wrench,
    lqr_command,
    omni_thrusts,
    pd_plus_omni,
    pd_plus_under,
    resolve_actuation,
    solve_care,
    task_coordinates,
    task_decomposition,
    task_quantities,
)
from .dynamics import NQ, NX, linearize, step_rk4
from .errors import NumericalError, OutputError, SimulationAborted
from .estimation import (
    ChannelId,
    EkfState,
    MeasurementPacket,
    SensorChannel,
    ekf_step,
    ekf_update_joint,
    measurement_jacobian,
    measurement_model,
    nees,
)
from .scenario import ControllerKind, EstimatorKind, Scenario, format_scenario

SETTLE_BAND = 0.02
SETTLE_FLOOR = 1e-3
NEES_BAND_10 = (3.2470, 20.4832)  # central 95% of chi-square with 10 DoF

_CHANNEL_CODES = {"initial": 1, "process": 2, "velocity": 3, "orientation": 4}
_BATCH = 1  # stream index used by batched Monte-Carlo runs


# ---------------------------------------------------------------- randomness


def noise_stream(seed: int, channel: str, tick: int, run: int = 0) -> np.random.Generator:
    """Generator for one ``(seed, channel, run, tick)`` cell.

    Philox is counter based: the key comes from ``(seed, channel, run)``
    and the tick sits in the high word of the counter, so cells never share
    random blocks.
    """
    return np.random.Generator(np.random.Philox(key=_stream_key(seed, channel, run), counter=[0, 0, 0, tick]))


@functools.lru_cache(maxsize=4096)
def _stream_key(seed: int, channel: str, run: int) -> int:
    words = np.random.SeedSequence([seed, _CHANNEL_CODES[channel], run]).generate_state(2, np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


# ---------------------------------------------------------------- controllers


def scenario_channels(s: Scenario) -> dict:
    return {
        ChannelId.VELOCITY: SensorChannel(ChannelId.VELOCITY, s.velocity_rate, s.velocity_var * np.eye(3), (0, 1, 2)),
        ChannelId.ORIENTATION: SensorChannel(ChannelId.ORIENTATION, s.orientation_rate,
                                             s.orientation_var * np.eye(3), (3, 4, 5)),
    }


def design_lqr(s: Scenario, config: PlatformConfig) -> LqrDesign:
    """LQR on the origin linearization with the platform's input map."""
    A, B = linearize(np.zeros(NX), None, s.params, selector=config.B_sel)
    R = np.diag(s.R_hat[list(config.components)])
    return solve_care(A, B, np.diag(s.Q_hat), R)


def task_gains(s: Scenario, kind: PlatformKind) -> TaskGains:
    """Gains and target in the task the platform can track."""
    if kind is PlatformKind.OMNIDIRECTIONAL:
        Kp = np.r_[s.Kp[:2], s.Kp_tilt, s.Kp[2]]
        Kd = np.r_[s.Kd[:2], s.Kd_tilt, s.Kd[2]]
        return TaskGains(Kp, Kd, x_d=np.r_[s.target[:2], 0.0, 0.0, s.target[2]])
    return TaskGains(s.Kp, s.Kd, x_d=s.target)


@dataclass
class _Command:
    requested: np.ndarray  # body wrench asked for (6)
    applied: np.ndarray  # body wrench the thrusts produce (6)
    thrusts: np.ndarray
    saturated: bool
    F_n: np.ndarray


class _Controller:
    """Per-run controller state (gain design and allocation warm start)."""

    def __init__(self, s: Scenario, config: PlatformConfig, design: LqrDesign | None = None):
        self.s = s
        self.config = config
        self.kind = s.controller
        if self.kind is ControllerKind.LQR and design is None:
            design = design_lqr(s, config)
        self.design = design
        self.gains = task_gains(s, config.kind) if self.kind is ControllerKind.PD_PLUS else None
        self._warm: MotorCommand | BoundedSolution | None = None

    def __call__(self, x) -> _Command:
        cfg = self.config
        zero2 = np.zeros(2)
        if self.kind is ControllerKind.NONE:
            return _Command(np.zeros(6), np.zeros(6), np.zeros(cfg.n_motors), False, zero2)
        q, qd = x[:NQ], x[NQ:]
        gravity = self.s.gravity_compensation
        if self.kind is ControllerKind.LQR:
            u_p = lqr_command(self.design.K, x)
            cmd = allocate_thrusts(u_p, cfg, warm=self._warm)
            self._warm = cmd
            return _Command(cfg.B_sel @ u_p, cfg.B_sel @ cmd.wrench, cmd.thrusts, cmd.saturated, zero2)
        if cfg.kind is PlatformKind.OMNIDIRECTIONAL:
            tq = task_quantities(q, qd, self.s.params, TaskKind.OMNI5)
            F = pd_plus_omni(tq, self.gains, gravity=gravity)
            sol = omni_thrusts(F, tq, cfg, warm=self._warm)
            self._warm = sol
            return _Command(ideal_omni_wrench(F, tq), cfg.body_allocation @ sol.x, sol.x, sol.saturated, zero2)
        dec = task_decomposition(q, qd, self.s.params)
        F_x = pd_plus_under(dec, self.gains, gravity=gravity)
        u_p, F_n = resolve_actuation(F_x, dec, cfg)
        cmd = allocate_thrusts(u_p, cfg, warm=self._warm)
        self._warm = cmd
        return _Command(cfg.B_sel @ u_p, cfg.B_sel @ cmd.wrench, cmd.thrusts, cmd.saturated, F_n)


# ---------------------------------------------------------------- logs and metrics


@dataclass(eq=False)
class SimLog:
    """Uniformly sampled run record; one row per control tick."""

    scenario: Scenario
    t: np.ndarray
    x_true: np.ndarray
    x_hat: np.ndarray
    u_cmd: np.ndarray
    u_applied: np.ndarray
    thrusts: np.ndarray
    pwm: np.ndarray
    task: np.ndarray  # (px, py, phi, theta, psi) of the true state
    saturated: np.ndarray
    F_n: np.ndarray

    @classmethod
    def empty(cls, s: Scenario, n_motors: int) -> "SimLog":
        z = lambda k: np.zeros((0, k))  # noqa: E731
        return cls(s, np.zeros(0), z(NX), z(NX), z(6), z(6), z(n_motors), z(n_motors), z(5),
                   np.zeros(0, dtype=bool), z(2))

    def __len__(self) -> int:
        return self.t.size

    @property
    def n_motors(self) -> int:
        return self.thrusts.shape[1]

    def columns(self) -> list[str]:
        q = [f"q{i}" for i in range(1, 6)] + [f"qd{i}" for i in range(1, 6)]
        w = ["fx", "fy", "fz", "mx", "my", "mz"]
        return (["t"] + q + [c + "_hat" for c in q] + ["cmd_" + c for c in w] + ["app_" + c for c in w]
                + [f"F{i}" for i in range(1, self.n_motors + 1)]
                + [f"pwm{i}" for i in range(1, self.n_motors + 1)]
                + ["px", "py", "phi", "theta", "psi", "saturated", "Fn1", "Fn2"])

    def table(self) -> np.ndarray:
        return np.column_stack([self.t, self.x_true, self.x_hat, self.u_cmd, self.u_applied, self.thrusts,
                                self.pwm, self.task, self.saturated.astype(float), self.F_n])


@dataclass(frozen=True, eq=False)
class Metrics:
    settling_time: np.ndarray  # per joint, inf when unsettled
    peak: np.ndarray  # per joint max |q_i|
    energy: float
    saturation_fraction: float
    final_task_error: float
    duration: float

    @property
    def settled(self) -> np.ndarray:
        return np.isfinite(self.settling_time) & (self.settling_time <= self.duration)

    def as_lines(self) -> list[str]:
        f = lambda a: ", ".join(repr(float(v)) for v in a)  # noqa: E731
        return [
            f"metrics.settling_time = {f(self.settling_time)}",
            f"metrics.peak = {f(self.peak)}",
            f"metrics.energy = {self.energy!r}",
            f"metrics.saturation_fraction = {self.saturation_fraction!r}",
            f"metrics.final_task_error = {self.final_task_error!r}",
        ]


def settling_time(series, band: float = SETTLE_BAND, *, dt: float | None = None, t=None,
                  floor: float = SETTLE_FLOOR) -> np.ndarray:
    """First time after which ``|signal|`` stays within ``band * max(|initial|, floor)``.

    ``series`` is ``(n,)`` or ``(n, k)``. Unsettled channels get ``inf``.
    """
    s = np.asarray(series, dtype=float)
    single = s.ndim == 1
    s = s.reshape(s.shape[0], -1)
    if s.shape[0] == 0:
        raise ValueError("settling time of an empty series")
    if t is None:
        t = np.arange(s.shape[0]) * (1.0 if dt is None else dt)
    t = np.asarray(t, dtype=float)
    thr = band * np.maximum(np.abs(s[0]), floor)
    out = np.empty(s.shape[1])
    for c in range(s.shape[1]):
        idx = np.flatnonzero(np.abs(s[:, c]) > thr[c])
        if idx.size == 0:
            out[c] = t[0]
        elif idx[-1] == s.shape[0] - 1:
            out[c] = math.inf
        else:
            out[c] = t[idx[-1] + 1]
    return out[0] if single else out


def energy_of_log(log: SimLog) -> float:
    """PWM-weighted thrust integral over the commands that were applied."""
    if len(log) < 2:
        return 0.0
    dt = log.scenario.dt_ctrl
    return float(np.sum(log.thrusts[:-1] * log.pwm[:-1]) * dt)


def compute_metrics(log: SimLog) -> Metrics:
    s = log.scenario
    if len(log) == 0:
        z = np.zeros(NQ)
        return Metrics(z, z, 0.0, 0.0, 0.0, s.duration)
    q = log.x_true[:, :NQ]
    kind = s.platform
    if kind is PlatformKind.OMNIDIRECTIONAL:
        err = log.task - np.r_[s.target[:2], 0.0, 0.0, s.target[2]]
    else:
        err = log.task[:, [0, 1, 4]] - s.target
    err[:, 2:] = np.mod(err[:, 2:] + np.pi, 2 * np.pi) - np.pi
    applied = log.saturated[:-1] if len(log) > 1 else log.saturated
    return Metrics(
        settling_time=settling_time(q, t=log.t),
        peak=np.abs(q).max(axis=0),
        energy=energy_of_log(log),
        saturation_fraction=float(applied.mean()) if applied.size else 0.0,
        final_task_error=float(np.linalg.norm(err[-1])),
        duration=s.duration,
    )


# ---------------------------------------------------------------- runs


def _measure(x, k, s: Scenario, channels, run: int = 0):
    """Packets due at tick ``k``; ``x`` may be a batch of states."""
    packets = []
    t = k * s.dt_ctrl
    h = None
    for ch in channels.values():
        if k % s.ticks_per_sample(ch.rate):
            continue
        if h is None:
            h = measurement_model(x, s.params, check_gimbal=False)
        z = h[..., list(ch.dims)]
        if s.sensor_noise:
            sd = np.sqrt(np.diag(ch.R))
            z = z + sd * noise_stream(s.seed, ch.id.value, k, run).standard_normal(z.shape)
        packets.append(MeasurementPacket(t, ch.id, z))
    return packets


def run_scenario(s: Scenario) -> tuple[SimLog, Metrics]:
    """Simulate one scenario; identical inputs give bit-identical logs."""
    config = builtin_platform(s.platform, f_max=s.f_max)
    controller = _Controller(s, config)
    channels = scenario_channels(s)
    Q_proc = np.diag(s.Q_proc)
    proc_sd = np.sqrt(s.Q_proc * s.dt_sim)
    n, m = s.n_ticks, config.n_motors

    t = np.arange(n) * s.dt_ctrl
    X = np.empty((n, NX))
    Xh = np.empty((n, NX))
    Uc = np.empty((n, 6))
    Ua = np.empty((n, 6))
    F = np.empty((n, m))
    P = np.empty((n, m))
    sat = np.zeros(n, dtype=bool)
    Fn = np.empty((n, 2))

    x = s.x0.copy()
    ekf = None
    if s.estimator is EstimatorKind.EKF:
        x_hat0 = x + np.sqrt(s.P0) * noise_stream(s.seed, "initial", 0).standard_normal(NX)
        ekf = EkfState(x_hat0, np.diag(s.P0), 0.0)
    u_body = np.zeros(6)
    for k in range(n):
        try:
            if ekf is not None:
                packets = _measure(x, k, s, channels)
                if k == 0:
                    ekf = ekf_update_joint(ekf, packets, channels, s.params)
                else:
                    ekf = ekf_step(ekf, u_body, s.dt_ctrl, Q_proc, packets, channels, s.params)
                x_fb = ekf.x_hat
            else:
                x_fb = x
            cmd = controller(x_fb)
        except NumericalError as exc:
            raise SimulationAborted(f"run stopped at t = {t[k]:.6g} s: {exc}", t[k], x.copy()) from exc
        u_body = cmd.applied
        X[k], Xh[k] = x, x_fb
        Uc[k], Ua[k], F[k], sat[k], Fn[k] = cmd.requested, cmd.applied, cmd.thrusts, cmd.saturated, cmd.F_n
        P[k] = pwm_of_thrust(cmd.thrusts, config)
        if k == n - 1:
            break
        try:
            for j in range(s.substeps):
                x = step_rk4(x, u_body, s.dt_sim, s.params)
                if s.process_noise:
                    tick = k * s.substeps + j
                    x = x + proc_sd * noise_stream(s.seed, "process", tick).standard_normal(NX)
        except NumericalError as exc:
            raise SimulationAborted(f"integration failed after t = {t[k]:.6g} s: {exc}", t[k], x.copy()) from exc
        if not np.isfinite(x).all():
            raise SimulationAborted(f"state diverged after t = {t[k]:.6g} s", t[k], x.copy())

    task = task_coordinates(X[:, :NQ], s.params, TaskKind.OMNI5)
    log = SimLog(s, t, X, Xh, Uc, Ua, F, P, task, sat, Fn)
    return log, compute_metrics(log)


# ---------------------------------------------------------------- comparison


@dataclass(eq=False)
class Comparison:
    base: Scenario
    runs: dict = field(default_factory=dict)  # PlatformKind -> (SimLog, Metrics)
    failures: dict = field(default_factory=dict)  # PlatformKind -> message

    def energy(self, kind) -> float:
        return self.runs[PlatformKind(kind)][1].energy

    def energy_delta(self, kind) -> float:
        """Percentage change of the energy estimate against the omnidirectional run."""
        ref = self.energy(PlatformKind.OMNIDIRECTIONAL)
        if ref == 0.0:
            return 0.0
        return 100.0 * (self.energy(kind) - ref) / ref

    def table(self) -> str:
        rows = [f"{'platform':<18} {'energy':>10} {'delta %':>9} {'max settle s':>12} {'saturated':>9}"]
        for kind in PlatformKind:
            if kind in self.failures:
                rows.append(f"{kind.value:<18} failed: {self.failures[kind]}")
                continue
            if kind not in self.runs:
                continue
            met = self.runs[kind][1]
            delta = self.energy_delta(kind) if PlatformKind.OMNIDIRECTIONAL in self.runs else math.nan
            rows.append(f"{kind.value:<18} {met.energy:>10.4f} {delta:>9.2f} "
                        f"{met.settling_time.max():>12.3f} {met.saturation_fraction:>9.3f}")
        return "\n".join(rows)


def compare_platforms(base: Scenario, kinds=tuple(PlatformKind)) -> Comparison:
    """Run the same scenario (gains, seed, initial state) on each platform."""
    comp = Comparison(base)
    for kind in kinds:
        kind = PlatformKind(kind)
        try:
            comp.runs[kind] = run_scenario(base.replace(platform=kind))
        except NumericalError as exc:
            comp.failures[kind] = str(exc)
    return comp


# ---------------------------------------------------------------- files


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(v) for v in row])
    return buf.getvalue()


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def log_csv(log: SimLog) -> str:
    return _csv_text(log.columns(), log.table().tolist())


def summary_text(log: SimLog, metrics: Metrics) -> str:
    return format_scenario(log.scenario) + "\n".join(metrics.as_lines()) + "\n"


def export_log(log: SimLog, metrics: Metrics, prefix) -> list[Path]:
    """Write ``PREFIX.csv`` (time series) and ``PREFIX.summary.txt``."""
    prefix = Path(prefix)
    return [
        _write(prefix.with_name(prefix.name + ".csv"), log_csv(log)),
        _write(prefix.with_name(prefix.name + ".summary.txt"), summary_text(log, metrics)),
    ]


def figure_tables(comp: Comparison) -> dict[str, tuple[list[str], np.ndarray]]:
    """Per-figure layouts: joint angles, cumulative energy, task coordinates, wrenches."""
    kinds = [k for k in PlatformKind if k in comp.runs]
    if not kinds:
        return {}
    t = comp.runs[kinds[0]][0].t
    tag = {PlatformKind.OMNIDIRECTIONAL: "od", PlatformKind.PLANAR_THRUST: "pt",
           PlatformKind.MINIMAL_ACTUATED: "ma"}
    joints, energy, task, wrench = [t], [t], [t], [t]
    jc, ec, tc, wc = ["t"], ["t"], ["t"], ["t"]
    for k in kinds:
        log = comp.runs[k][0]
        joints.append(log.x_true[:, :NQ])
        jc += [f"{tag[k]}_q{i}" for i in range(1, 6)]
        step = np.sum(log.thrusts * log.pwm, axis=1) * comp.base.dt_ctrl
        energy.append(np.r_[0.0, np.cumsum(step[:-1])][:, None])
        ec.append(f"{tag[k]}_energy")
        task.append(log.task[:, [0, 1, 4]])
        tc += [f"{tag[k]}_{c}" for c in ("px", "py", "psi")]
        wrench.append(log.u_applied)
        wc += [f"{tag[k]}_{c}" for c in ("fx", "fy", "fz", "mx", "my", "mz")]
    return {
        "joints": (jc, np.column_stack(joints)),
        "energy": (ec, np.column_stack(energy)),
        "task": (tc, np.column_stack(task)),
        "wrench": (wc, np.column_stack(wrench)),
    }


def export_comparison(comp: Comparison, prefix) -> list[Path]:
    prefix = Path(prefix)
    paths = []
    for name, (cols, data) in figure_tables(comp).items():
        paths.append(_write(prefix.with_name(f"{prefix.name}.{name}.csv"), _csv_text(cols, data.tolist())))
    text = format_scenario(comp.base) + "\n" + comp.table() + "\n"
    paths.append(_write(prefix.with_name(prefix.name + ".summary.txt"), text))
    return paths


def read_measurements(path) -> list[MeasurementPacket]:
    """Packets from a ``t, channel, z1, z2, z3`` CSV (header row required)."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["t", "channel", "z1", "z2", "z3"]:
        raise ValueError(f"{path}: expected header t,channel,z1,z2,z3")
    packets = []
    for i, row in enumerate(rows[1:], 2):
        if not row:
            continue
        try:
            packets.append(MeasurementPacket(float(row[0]), row[1].strip(), [float(v) for v in row[2:5]]))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{i}: {exc}") from exc
    return packets


def replay_estimator(s: Scenario, packets, u=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """EKF over recorded packets on the scenario's control grid.

    Each packet is fused at the first tick at or after its timestamp. The
    input is held at ``u`` (zero wrench by default). Returns tick times,
    estimates and covariance diagonals.
    """
    channels = scenario_channels(s)
    Q_proc = np.diag(s.Q_proc)
    if not packets:
        return np.zeros(0), np.zeros((0, NX)), np.zeros((0, NX))
    last = max(p.t for p in packets)
    n = int(math.ceil(last / s.dt_ctrl - 1e-9)) + 1
    buckets: dict[int, list] = {}
    for p in packets:
        if p.t < 0:
            raise ValueError("measurement timestamps must be non-negative")
        k = int(math.ceil(p.t / s.dt_ctrl - 1e-9))
        buckets.setdefault(k, []).append(MeasurementPacket(k * s.dt_ctrl, p.channel, p.z))
    state = EkfState(s.x0, np.diag(s.P0), 0.0)
    t, xs, ps = np.arange(n) * s.dt_ctrl, np.empty((n, NX)), np.empty((n, NX))
    for k in range(n):
        pk = buckets.get(k, [])
        if k == 0:
            state = ekf_update_joint(state, pk, channels, s.params)
        else:
            state = ekf_step(state, u, s.dt_ctrl, Q_proc, pk, channels, s.params)
        xs[k], ps[k] = state.x_hat, np.diag(state.P)
    return t, xs, ps


def replay_csv(t, xs, ps) -> str:
    cols = ["t"] + [f"x{i}_hat" for i in range(1, NX + 1)] + [f"P{i}{i}" for i in range(1, NX + 1)]
    return _csv_text(cols, np.column_stack([t, xs, ps]).tolist())


# ---------------------------------------------------------------- estimator consistency


@dataclass(frozen=True, eq=False)
class NeesResult:
    t: np.ndarray
    nees: np.ndarray  # (ticks, runs)
    band: tuple[float, float]

    @property
    def in_band(self) -> np.ndarray:
        lo, hi = self.band
        return (self.nees >= lo) & (self.nees <= hi)

    @property
    def fraction_in_band(self) -> float:
        """Share of all (tick, run) samples inside the band."""
        return float(self.in_band.mean())

    @property
    def step_fraction(self) -> np.ndarray:
        """Share of runs inside the band at each tick."""
        return self.in_band.mean(axis=1)


def nees_monte_carlo(s: Scenario, runs: int = 100, duration: float | None = None) -> NeesResult:
    """EKF consistency over ``runs`` noisy realizations, all stepped as one batch.

    Each run starts from ``x0`` plus a draw from ``P0``, has process noise
    ``N(0, Q_proc dt_sim)`` added to the truth every integration step and
    sensor noise from the channel covariances, so the filter model is
    matched. The controller acts on the true state; the filter is told the
    applied wrench.
    """
    duration = s.duration if duration is None else duration
    s = s.replace(duration=duration)
    config = builtin_platform(s.platform, f_max=s.f_max)
    channels = scenario_channels(s)
    Q_proc = np.diag(s.Q_proc)
    proc_sd = np.sqrt(s.Q_proc * s.dt_sim)
    first = _Controller(s, config)
    ctrls = [first] + [_Controller(s, config, first.design) for _ in range(runs - 1)]
    # one stream cell per (channel, tick) feeds the whole batch, row r for run r
    x = s.x0 + np.sqrt(s.P0) * noise_stream(s.seed, "initial", 0, _BATCH).standard_normal((runs, NX))
    state = EkfState(np.tile(s.x0, (runs, 1)), np.tile(np.diag(s.P0), (runs, 1, 1)), 0.0)
    n = s.n_ticks
    out = np.empty((n, runs))
    u = np.zeros((runs, 6))
    for k in range(n):
        packets = []
        for ch in channels.values():
            if k % s.ticks_per_sample(ch.rate):
                continue
            z = measurement_model(x, s.params, check_gimbal=False)[:, list(ch.dims)]
            sd = np.sqrt(np.diag(ch.R))
            z = z + sd * noise_stream(s.seed, ch.id.value, k, _BATCH).standard_normal((runs, 3))
            packets.append(MeasurementPacket(k * s.dt_ctrl, ch.id, z))
        if k == 0:
            state = ekf_update_joint(state, packets, channels, s.params)
        else:
            state = ekf_step(state, u, s.dt_ctrl, Q_proc, packets, channels, s.params)
        out[k] = nees(x, state)
        if k == n - 1:
            break
        u = np.stack([ctrls[r](x[r]).applied for r in range(runs)])
        for j in range(s.substeps):
            x = step_rk4(x, u, s.dt_sim, s.params)
            tick = k * s.substeps + j
            x = x + proc_sd * noise_stream(s.seed, "process", tick, _BATCH).standard_normal((runs, NX))
    return NeesResult(np.arange(n) * s.dt_ctrl, out, NEES_BAND_10)


# ---------------------------------------------------------------- gains report


def gains_report(s: Scenario) -> str:
    """LQR gain, Riccati residual and rank diagnostics for the scenario's platform."""
    config = builtin_platform(s.platform, f_max=s.f_max)
    A, B = linearize(np.zeros(NX), None, s.params, selector=config.B_sel)
    d = design_lqr(s, config)
    H = measurement_jacobian(np.zeros(NX), s.params)
    lines = [
        f"platform = {config.kind.value}",
        f"controllability_rank = {ctrb_obsv_rank(A, B)}",
        f"observability_rank = {ctrb_obsv_rank(A, H, observability=True)}",
        f"care_residual = {d.residual!r}",
        f"spectral_abscissa = {d.spectral_abscissa!r}",
    ]
    for i, row in enumerate(d.K):
        lines.append(f"K[{i}] = " + ", ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
