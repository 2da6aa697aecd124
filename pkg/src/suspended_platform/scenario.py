"""Scenario descriptions and their ``key = value`` text form.

A scenario file is line oriented: ``section.key = value``, ``#`` starts a
comment, vectors are comma separated. Every field has a default, and
:func:`format_scenario` writes all of them out, so a formatted scenario is a
complete, self-describing record that parses back to an equal object.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocation import F_MAX, PlatformKind
from .control import EXPERIMENT_Q_HAT, DAMPING_Q_HAT
from .dynamics import NX, PendulumParams
from .errors import ScenarioError
from .estimation import DEFAULT_Q_PROC


class ControllerKind(str, enum.Enum):
    LQR = "lqr"
    PD_PLUS = "pd-plus"
    NONE = "none"


class EstimatorKind(str, enum.Enum):
    TRUE_STATE = "true-state"
    EKF = "ekf"


def _vec(values, n=None):
    a = np.array(values, dtype=float).reshape(-1)
    if n is not None and a.size != n:
        raise ScenarioError(f"expected {n} values, got {a.size}")
    return a


@dataclass(frozen=True, eq=False)
class Scenario:
    """Everything needed to reproduce one run."""

    name: str = "custom"
    platform: PlatformKind = PlatformKind.OMNIDIRECTIONAL
    controller: ControllerKind = ControllerKind.LQR
    estimator: EstimatorKind = EstimatorKind.TRUE_STATE
    seed: int = 0
    x0: np.ndarray = field(default_factory=lambda: np.r_[0.15, 0.2, 0.2, 0.0, 0.0, np.zeros(5)])
    duration: float = 20.0
    dt_sim: float = 1e-3
    dt_ctrl: float = 2e-3
    params: PendulumParams = field(default_factory=PendulumParams)
    f_max: float = F_MAX
    Q_hat: np.ndarray = field(default_factory=lambda: np.diag(DAMPING_Q_HAT).copy())
    R_hat: np.ndarray = field(default_factory=lambda: np.ones(6))
    # PD+ gains on (px, py, psi); the omnidirectional task adds (phi, theta)
    Kp: np.ndarray = field(default_factory=lambda: np.array([400.0, 400.0, 100.0]))
    Kd: np.ndarray = field(default_factory=lambda: np.array([40.0, 40.0, 20.0]))
    Kp_tilt: np.ndarray = field(default_factory=lambda: np.array([100.0, 100.0]))
    Kd_tilt: np.ndarray = field(default_factory=lambda: np.array([20.0, 20.0]))
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity_compensation: bool = False
    velocity_rate: float = 100.0
    orientation_rate: float = 50.0
    velocity_var: float = 1e-4
    orientation_var: float = 1e-5
    Q_proc: np.ndarray = field(default_factory=lambda: np.diag(DEFAULT_Q_PROC).copy())
    P0: np.ndarray = field(default_factory=lambda: np.r_[np.full(5, 1e-4), np.full(5, 1e-4)])
    process_noise: bool = False
    sensor_noise: bool = True

    def __post_init__(self):
        try:
            object.__setattr__(self, "platform", PlatformKind(self.platform))
            object.__setattr__(self, "controller", ControllerKind(self.controller))
            object.__setattr__(self, "estimator", EstimatorKind(self.estimator))
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
        sizes = {"x0": NX, "Q_hat": NX, "R_hat": 6, "Kp": 3, "Kd": 3, "Kp_tilt": 2,
                 "Kd_tilt": 2, "target": 3, "Q_proc": NX, "P0": NX}
        for name, n in sizes.items():
            a = _vec(getattr(self, name), n)
            if not np.isfinite(a).all():
                raise ScenarioError(f"{name} must be finite")
            object.__setattr__(self, name, a)
        for name in ("duration", "dt_sim", "dt_ctrl", "f_max", "velocity_rate", "orientation_rate",
                     "velocity_var", "orientation_var"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ScenarioError(f"{name} must be positive, got {v}")
            object.__setattr__(self, name, v)
        if self.dt_sim > self.dt_ctrl:
            raise ScenarioError("dt_sim must not exceed dt_ctrl")
        if abs(self.substeps * self.dt_sim - self.dt_ctrl) > 1e-9 * self.dt_ctrl:
            raise ScenarioError("dt_ctrl must be an integer multiple of dt_sim")
        for name in ("velocity_rate", "orientation_rate"):
            per = 1.0 / (getattr(self, name) * self.dt_ctrl)
            if per < 1 - 1e-9 or abs(per - round(per)) > 1e-6:
                raise ScenarioError(f"{name} must divide the control rate {1 / self.dt_ctrl:g} Hz")
        if (self.Q_hat < 0).any() or (self.Q_proc < 0).any() or (self.P0 < 0).any():
            raise ScenarioError("Q_hat, Q_proc and P0 diagonals must be non-negative")
        if (self.R_hat <= 0).any():
            raise ScenarioError("R_hat diagonal must be positive")
        if min(self.Kp.min(), self.Kd.min(), self.Kp_tilt.min(), self.Kd_tilt.min()) < 0:
            raise ScenarioError("PD gains must be non-negative")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or self.seed < 0:
            raise ScenarioError("seed must be a non-negative integer")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def substeps(self) -> int:
        return max(1, int(round(self.dt_ctrl / self.dt_sim)))

    @property
    def n_ticks(self) -> int:
        """Control ticks in the run, including the one at t = 0."""
        return int(math.floor(self.duration / self.dt_ctrl + 1e-9)) + 1

    def ticks_per_sample(self, rate: float) -> int:
        return int(round(1.0 / (rate * self.dt_ctrl)))

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return format_scenario(self) == format_scenario(other)


# (key, attribute, kind); kind drives both parsing and formatting
_FIELDS = [
    ("name", "name", "str"),
    ("platform", "platform", "enum"),
    ("controller", "controller", "enum"),
    ("estimator", "estimator", "enum"),
    ("seed", "seed", "int"),
    ("time.duration", "duration", "float"),
    ("time.dt_sim", "dt_sim", "float"),
    ("time.dt_ctrl", "dt_ctrl", "float"),
    ("initial.x0", "x0", "vec"),
    ("model.L1", "params.L1", "float"),
    ("model.L2", "params.L2", "float"),
    ("model.m1", "params.m1", "float"),
    ("model.m2", "params.m2", "float"),
    ("model.inertia", "params.inertia", "vec"),
    ("model.g0", "params.g0", "float"),
    ("model.f_max", "f_max", "float"),
    ("lqr.Q_hat", "Q_hat", "vec"),
    ("lqr.R_hat", "R_hat", "vec"),
    ("pd.Kp", "Kp", "vec"),
    ("pd.Kd", "Kd", "vec"),
    ("pd.Kp_tilt", "Kp_tilt", "vec"),
    ("pd.Kd_tilt", "Kd_tilt", "vec"),
    ("pd.target", "target", "vec"),
    ("pd.gravity_compensation", "gravity_compensation", "bool"),
    ("sensors.velocity_rate", "velocity_rate", "float"),
    ("sensors.orientation_rate", "orientation_rate", "float"),
    ("sensors.velocity_var", "velocity_var", "float"),
    ("sensors.orientation_var", "orientation_var", "float"),
    ("sensors.noise", "sensor_noise", "bool"),
    ("ekf.Q_proc", "Q_proc", "vec"),
    ("ekf.P0", "P0", "vec"),
    ("ekf.process_noise", "process_noise", "bool"),
]
_KEYS = {k: (attr, kind) for k, attr, kind in _FIELDS}
_PARAM_ATTRS = {"L1", "L2", "m1", "m2", "inertia", "g0"}


def _fmt(value, kind) -> str:
    if kind == "vec":
        return ", ".join(repr(float(v)) for v in np.ravel(value))
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind == "enum":
        return value.value
    return str(value)


def _parse_value(text: str, kind: str, key: str):
    try:
        if kind == "vec":
            return [float(v) for v in text.split(",")]
        if kind == "float":
            return float(text)
        if kind == "int":
            return int(text)
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "1")
    except ValueError as exc:
        raise ScenarioError(f"bad value for {key}: {text!r}") from exc
    return text


def format_scenario(s: Scenario) -> str:
    lines = []
    for key, attr, kind in _FIELDS:
        obj = s.params if attr.startswith("params.") else s
        lines.append(f"{key} = {_fmt(getattr(obj, attr.split('.')[-1]), kind)}")
    return "\n".join(lines) + "\n"


def parse_scenario(text: str, base: Scenario | None = None) -> Scenario:
    """Scenario from ``key = value`` lines; unspecified keys come from ``base``."""
    base = base or Scenario()
    changes: dict = {}
    params: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key == "builtin":
            base = builtin_scenario(value)
            continue
        if key not in _KEYS:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        attr, kind = _KEYS[key]
        v = _parse_value(value, kind, key)
        if attr.startswith("params."):
            params[attr.split(".", 1)[1]] = v
        else:
            changes[attr] = v
    if params:
        try:
            if "inertia" in params:
                params["inertia"] = tuple(params["inertia"])
            changes["params"] = dataclasses.replace(base.params, **params)
        except (ValueError, TypeError) as exc:
            raise ScenarioError(str(exc)) from exc
    try:
        return dataclasses.replace(base, **changes)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc


def load_scenario(path) -> Scenario:
    """Read a scenario file; ``builtin:NAME`` selects a shipped scenario."""
    path = str(path)
    if path.startswith("builtin:"):
        return builtin_scenario(path.split(":", 1)[1])
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(format_scenario(s), encoding="utf-8")


def builtin_scenario(name: str) -> Scenario:
    """Shipped scenarios.

    ``damping-lqr``
        Free-hanging release from ``q = (0.15, 0.2, 0.2, 0, 0)`` damped by LQR.
    ``damping-pd``
        Same release, PD+ task-space regulation to the origin.
    ``experiment-lqr`` / ``experiment-pd``
        The same release with the gain sets tuned on hardware.
    """
    if name == "damping-lqr":
        return Scenario(name=name)
    if name == "damping-pd":
        return Scenario(name=name, controller=ControllerKind.PD_PLUS, duration=10.0)
    if name == "experiment-lqr":
        return Scenario(name=name, Q_hat=np.diag(EXPERIMENT_Q_HAT).copy())
    if name == "experiment-pd":
        return Scenario(name=name, controller=ControllerKind.PD_PLUS, duration=10.0,
                        Kp=np.array([25.0, 25.0, 0.35]), Kd=np.array([10.0, 10.0, 0.13]))
    raise ScenarioError(f"unknown built-in scenario {name!r}; choose from {', '.join(BUILTIN_NAMES)}")


BUILTIN_NAMES = ("damping-lqr", "damping-pd", "experiment-lqr", "experiment-pd")
