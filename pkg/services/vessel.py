"""Discrete-time 3-DOF second-order modulus vessel model.

Covers the surge/sway/yaw update equations, ocean-current and measurement
disturbances, the azimuth-thruster force model and planar pose kinematics.
Velocities are (u, v, r); poses are (x, y, psi) with psi in (-pi, pi].
"""
import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from services.errors import NonFiniteInputError, SimulationDivergenceError

logger = logging.getLogger(__name__)

N_THETA = 10
N_X = 3
DEFAULT_BOUND = 1e3


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class VesselParams:
    x_u: float
    x_uu: float
    x_vr: float
    x_tau: float
    y_v: float
    y_ur: float
    y_tau: float
    n_r: float
    n_uv: float
    n_tau: float

    @classmethod
    def reference(cls) -> "VesselParams":
        """Model-ship coefficients at f_s = 8 Hz."""
        return cls(
            x_u=-0.06, x_uu=-0.01, x_vr=0.08, x_tau=1.4e-5,
            y_v=-0.1, y_ur=-0.006, y_tau=1.4e-5,
            n_r=-0.35, n_uv=-0.03, n_tau=3e-4,
        )

    @classmethod
    def from_array(cls, theta: Sequence[float]) -> "VesselParams":
        values = [float(value) for value in theta]
        if len(values) != N_THETA:
            raise ValueError(f"expected {N_THETA} parameters, got {len(values)}")
        return cls(*values)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "VesselParams":
        return cls(**{f.name: float(data[f.name]) for f in fields(cls)})

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def is_stable(self) -> bool:
        """Sign pattern of the reference vessel: negative damping, positive actuation."""
        damping = (self.x_u, self.x_uu, self.y_v, self.n_r)
        actuation = (self.x_tau, self.y_tau, self.n_tau)
        return all(value < 0 for value in damping) and all(value > 0 for value in actuation)


@dataclass(frozen=True)
class BodyVelocity:
    u: float = 0.0
    v: float = 0.0
    r: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v, self.r], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "BodyVelocity":
        return cls(float(values[0]), float(values[1]), float(values[2]))


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi], dtype=float)


@dataclass(frozen=True)
class DisturbanceSample:
    """Per-step disturbance realization: currents (L,), noise (L, 3)."""

    u_c: np.ndarray
    v_c: np.ndarray
    e: np.ndarray
    w: np.ndarray

    @classmethod
    def zeros(cls, length: int) -> "DisturbanceSample":
        return cls(np.zeros(length), np.zeros(length), np.zeros((length, N_X)), np.zeros((length, N_X)))


@dataclass(frozen=True)
class DisturbanceConfig:
    """Disturbance levels.

    With ``variance=True`` (default) the sigma fields hold variances, so the
    reference value 0.025 means N(0, 0.025); set it False to read them as
    standard deviations.
    """

    sigma_current: float = 0.0
    sigma_meas: float = 0.0
    seed: int = 0
    variance: bool = True
    constant_current: bool = False
    sigma_process: float = 0.0

    def __post_init__(self):
        for name in ("sigma_current", "sigma_meas", "sigma_process"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def _std(self, value: float) -> float:
        return math.sqrt(value) if self.variance else value

    @property
    def is_zero(self) -> bool:
        return self.sigma_current == 0 and self.sigma_meas == 0 and self.sigma_process == 0

    def with_seed(self, seed: int) -> "DisturbanceConfig":
        return DisturbanceConfig(
            self.sigma_current, self.sigma_meas, seed, self.variance,
            self.constant_current, self.sigma_process,
        )

    def sample(self, length: int, rng: Optional[np.random.Generator] = None) -> DisturbanceSample:
        """Draw a disturbance realization; identical seeds give identical draws."""
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        s_c = self._std(self.sigma_current)
        if self.constant_current:
            u_c = np.full(length, rng.normal(0.0, s_c))
            v_c = np.full(length, rng.normal(0.0, s_c))
        else:
            u_c = rng.normal(0.0, s_c, size=length)
            v_c = rng.normal(0.0, s_c, size=length)
        e = rng.normal(0.0, self._std(self.sigma_meas), size=(length, N_X))
        w = rng.normal(0.0, self._std(self.sigma_process), size=(length, N_X))
        return DisturbanceSample(u_c, v_c, e, w)


@dataclass(frozen=True)
class ThrusterCommand:
    n1: float
    n2: float
    alpha1: float
    alpha2: float

    def __post_init__(self):
        object.__setattr__(self, "alpha1", wrap_angle(self.alpha1))
        object.__setattr__(self, "alpha2", wrap_angle(self.alpha2))


@dataclass(frozen=True)
class ActuatorGeometry:
    lx1: float = -0.45
    ly1: float = 0.08
    lx2: float = -0.45
    ly2: float = -0.08


@dataclass(frozen=True)
class Trajectory:
    """Simulated run: true states x(k), measurements y(k), applied inputs tau(k)."""

    states: np.ndarray
    outputs: np.ndarray
    tau: np.ndarray
    final_state: np.ndarray

    def __len__(self) -> int:
        return len(self.tau)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "k": np.arange(len(self.tau)),
            "u": self.states[:, 0], "v": self.states[:, 1], "r": self.states[:, 2],
            "y1": self.outputs[:, 0], "y2": self.outputs[:, 1], "y3": self.outputs[:, 2],
            "tau1": self.tau[:, 0], "tau2": self.tau[:, 1], "tau3": self.tau[:, 2],
        })


def _check_finite(name: str, values) -> None:
    if not np.all(np.isfinite(np.asarray(values, dtype=float))):
        raise NonFiniteInputError(name)


def step_array(x: np.ndarray, tau: np.ndarray, theta: np.ndarray, u_c: float, v_c: float) -> np.ndarray:
    u, v, r = x
    u_r = u - u_c
    v_r = v - v_c
    return np.array([
        u + theta[0] * u_r + theta[1] * u_r * abs(u_r) + theta[2] * v_r * r + theta[3] * tau[0],
        v + theta[4] * v_r + theta[5] * u_r * r + theta[6] * tau[1],
        r + theta[7] * r + theta[8] * u_r * v_r + theta[9] * tau[2],
    ])


def step_dynamics(
    state: BodyVelocity,
    tau: Sequence[float],
    params: VesselParams,
    current: Tuple[float, float] = (0.0, 0.0),
    process: Sequence[float] = (0.0, 0.0, 0.0),
) -> BodyVelocity:
    """One update of the surge, sway and yaw-rate equations."""
    for name in ("u", "v", "r"):
        _check_finite(f"state.{name}", getattr(state, name))
    _check_finite("tau", tau)
    _check_finite("current", current)
    _check_finite("process", process)
    theta = params.as_array()
    _check_finite("params", theta)
    nxt = step_array(state.as_array(), np.asarray(tau, dtype=float), theta, current[0], current[1])
    return BodyVelocity.from_array(nxt + np.asarray(process, dtype=float))


def simulate(
    initial: BodyVelocity,
    tau_sequence,
    params: VesselParams,
    disturbance: Optional[DisturbanceConfig] = None,
    bound: float = DEFAULT_BOUND,
    sample: Optional[DisturbanceSample] = None,
) -> Trajectory:
    """Simulate ``len(tau_sequence)`` steps; y(k) = x(k) + e(k).

    ``sample`` overrides the draw from ``disturbance`` so that callers can
    share one realization between runs.
    """
    tau = np.atleast_2d(np.asarray(tau_sequence, dtype=float))
    if tau.size == 0:
        raise ValueError("input sequence is empty")
    if tau.shape[1] != N_X:
        raise ValueError(f"tau must have {N_X} columns, got shape {tau.shape}")
    _check_finite("tau_sequence", tau)
    theta = params.as_array()
    _check_finite("params", theta)
    x = initial.as_array()
    _check_finite("initial", x)

    length = len(tau)
    if sample is None:
        sample = (disturbance or DisturbanceConfig()).sample(length)
    states = np.empty((length, N_X))
    for k in range(length):
        states[k] = x
        x = step_array(x, tau[k], theta, sample.u_c[k], sample.v_c[k]) + sample.w[k]
        if not np.all(np.abs(x) <= bound):
            logger.warning("[VESSEL] divergence at step %d", k + 1)
            raise SimulationDivergenceError(k + 1, bound)
    return Trajectory(states=states, outputs=states + sample.e, tau=tau, final_state=x)


def thruster_forces(cmd: ThrusterCommand, geom: ActuatorGeometry) -> np.ndarray:
    """Static azimuth-thruster model mapping two thrusters to (tau1, tau2, tau3)."""
    _check_finite("command", [cmd.n1, cmd.n2, cmd.alpha1, cmd.alpha2])
    tau = np.zeros(N_X)
    for n, alpha, lx, ly in (
        (cmd.n1, cmd.alpha1, geom.lx1, geom.ly1),
        (cmd.n2, cmd.alpha2, geom.lx2, geom.ly2),
    ):
        fx = n * math.cos(alpha)
        fy = n * math.sin(alpha)
        tau += (fx, fy, ly * fx + lx * fy)
    return tau


def kinematics_step(pose: Pose, vel: BodyVelocity, dt: float) -> Pose:
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = math.cos(pose.psi)
    s = math.sin(pose.psi)
    return Pose(
        x=pose.x + dt * (vel.u * c - vel.v * s),
        y=pose.y + dt * (vel.u * s + vel.v * c),
        psi=wrap_angle(pose.psi + dt * vel.r),
    )


def integrate_pose(velocities: np.ndarray, dt: float, start: Pose = Pose()) -> np.ndarray:
    """Pose after each step of ``velocities``; returns (L + 1, 3) including ``start``."""
    poses = np.empty((len(velocities) + 1, 3))
    pose = start
    poses[0] = pose.as_array()
    for k, (u, v, r) in enumerate(velocities):
        pose = kinematics_step(pose, BodyVelocity(u, v, r), dt)
        poses[k + 1] = pose.as_array()
    return poses
