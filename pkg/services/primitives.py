"""Dictionary of candidate excitation maneuvers.

Each candidate is described by a target envelope on (u, v, r). A simple
reference controller realizes the envelope on the vessel model; the resulting
input signal is frozen and replayed open-loop, so the dictionary is
deterministic and its expected trajectories can always be regenerated.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.config import BasicPrimitiveSpec, LibrarySection
from services.errors import ConfigError, SynthesisError
from services.vessel import (
    N_X,
    BodyVelocity,
    Pose,
    VesselParams,
    integrate_pose,
    simulate,
    step_array,
    wrap_angle,
)

logger = logging.getLogger(__name__)

MOTION_CLASSES = ("accelerate", "decelerate", "zigzag", "spiral", "steady", "sway")
CHANNELS = ("u", "v", "r")


@dataclass(frozen=True)
class ChannelTarget:
    """Target for one velocity channel.

    ``level`` holds a value (lo == hi), ``ramp`` moves linearly from lo to hi,
    ``band`` oscillates within [lo, hi] and ``magnitude`` keeps |value| within
    [lo, hi].
    """

    lo: float = 0.0
    hi: float = 0.0
    kind: str = "level"

    @classmethod
    def parse(cls, value: Any, where: str = "channel") -> "ChannelTarget":
        if isinstance(value, (int, float)):
            return cls(float(value), float(value), "level")
        if isinstance(value, list) and len(value) == 2:
            return cls(float(value[0]), float(value[1]), "band")
        if isinstance(value, dict):
            if set(value) == {"from", "to"}:
                return cls(float(value["from"]), float(value["to"]), "ramp")
            if set(value) == {"abs"}:
                lo, hi = value["abs"]
                return cls(float(lo), float(hi), "magnitude")
        raise ConfigError(f"cannot parse channel target {value!r} in '{where}'")

    def to_json(self) -> Any:
        if self.kind == "level":
            return self.lo
        if self.kind == "ramp":
            return {"from": self.lo, "to": self.hi}
        if self.kind == "magnitude":
            return {"abs": [self.lo, self.hi]}
        return [self.lo, self.hi]

    @property
    def scale(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    @property
    def amplitude(self) -> float:
        return self.scale if self.kind == "band" else 0.5 * (self.lo + self.hi)

    def bounds(self) -> Tuple[float, float]:
        if self.kind == "magnitude":
            return (-self.hi, self.hi)
        return (min(self.lo, self.hi), max(self.lo, self.hi))

    def start_value(self) -> float:
        return self.lo if self.kind == "ramp" else 0.0

    def reference(self, k: int, duration: int) -> float:
        """Reference value at sample k for non-switching motion classes."""
        if self.kind == "level":
            return self.lo
        if self.kind == "ramp":
            return self.lo + (self.hi - self.lo) * k / max(duration - 1, 1)
        if self.kind == "magnitude":
            return 0.5 * (self.lo + self.hi)
        # one triangular sweep centre -> hi -> lo -> centre
        centre = 0.5 * (self.lo + self.hi)
        phase = k / max(duration - 1, 1)
        tri = 1.0 - abs(((4.0 * phase + 1.0) % 4.0) - 2.0)
        return centre + tri * 0.5 * (self.hi - self.lo)


@dataclass(frozen=True)
class Envelope:
    id: int
    label: str
    motion: str
    u: ChannelTarget = field(default_factory=ChannelTarget)
    v: ChannelTarget = field(default_factory=ChannelTarget)
    r: ChannelTarget = field(default_factory=ChannelTarget)
    period: Optional[float] = None

    def __post_init__(self):
        if self.motion not in MOTION_CLASSES:
            raise ConfigError(f"unknown motion class '{self.motion}' for envelope {self.id}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Envelope":
        where = f"envelope {data.get('id', '?')}"
        return cls(
            id=int(data["id"]),
            label=str(data.get("label", f"tau{data['id']}")),
            motion=str(data["motion"]),
            u=ChannelTarget.parse(data.get("u", 0.0), f"{where}.u"),
            v=ChannelTarget.parse(data.get("v", 0.0), f"{where}.v"),
            r=ChannelTarget.parse(data.get("r", 0.0), f"{where}.r"),
            period=float(data["period"]) if data.get("period") is not None else None,
        )

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "id": self.id,
            "label": self.label,
            "motion": self.motion,
            "u": self.u.to_json(),
            "v": self.v.to_json(),
            "r": self.r.to_json(),
        }
        if self.period is not None:
            data["period"] = self.period
        return data

    def targets(self) -> Tuple[ChannelTarget, ChannelTarget, ChannelTarget]:
        return (self.u, self.v, self.r)


@dataclass(frozen=True, eq=False)
class ExperimentPrimitive:
    id: int
    label: str
    envelope: Envelope
    initial: BodyVelocity
    input_signal: np.ndarray
    expected_trajectory: np.ndarray
    breakpoints: Tuple[int, ...] = (0,)

    @property
    def duration(self) -> int:
        return len(self.input_signal)

    def segment_bounds(self) -> Tuple[int, int]:
        """Last complete period for periodic maneuvers, otherwise the whole record."""
        if len(self.breakpoints) >= 2:
            return (self.breakpoints[-2], self.breakpoints[-1])
        return (0, self.duration)

    @property
    def segment_length(self) -> int:
        start, stop = self.segment_bounds()
        return stop - start

    def segment_signal(self) -> np.ndarray:
        start, stop = self.segment_bounds()
        return self.input_signal[start:stop]

    def segment_trajectory(self) -> np.ndarray:
        start, stop = self.segment_bounds()
        return self.expected_trajectory[start:stop]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "label": self.label,
            "envelope": self.envelope.to_dict(),
            "initial": [self.initial.u, self.initial.v, self.initial.r],
            "breakpoints": list(self.breakpoints),
            "input_signal": self.input_signal.tolist(),
        }


@dataclass(frozen=True)
class PrimitiveLibrary:
    primitives: Tuple[ExperimentPrimitive, ...]

    def __post_init__(self):
        ids = [p.id for p in self.primitives]
        if ids != list(range(1, len(ids) + 1)):
            raise ConfigError(f"primitive ids must be unique and contiguous from 1, got {ids}")

    @property
    def Q(self) -> int:
        return len(self.primitives)

    def get(self, q: int) -> ExperimentPrimitive:
        if not 1 <= q <= self.Q:
            raise KeyError(f"no primitive {q} in a library of {self.Q}")
        return self.primitives[q - 1]

    def __iter__(self):
        return iter(self.primitives)

    def __len__(self) -> int:
        return self.Q

    @property
    def labels(self) -> List[str]:
        return [p.label for p in self.primitives]

    def to_dict(self) -> Dict[str, Any]:
        return {"Q": self.Q, "primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], params: VesselParams) -> "PrimitiveLibrary":
        """Rebuild a library; expected trajectories are re-simulated, never read."""
        primitives = []
        for item in data["primitives"]:
            initial = BodyVelocity(*item["initial"])
            signal = np.asarray(item["input_signal"], dtype=float).reshape(-1, N_X)
            trajectory = simulate(initial, signal, params).states
            primitives.append(ExperimentPrimitive(
                id=int(item["id"]),
                label=item["label"],
                envelope=Envelope.from_dict(item["envelope"]),
                initial=initial,
                input_signal=signal,
                expected_trajectory=trajectory,
                breakpoints=tuple(item.get("breakpoints", (0,))),
            ))
        return cls(tuple(primitives))


def load_envelopes(path) -> List[Envelope]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"envelope library not found: {path}")
    envelopes = [Envelope.from_dict(item) for item in data["envelopes"]]
    logger.info("[PRIMITIVES] loaded %d envelopes from %s", len(envelopes), path.name)
    return envelopes


def _control(
    x: np.ndarray,
    ref: np.ndarray,
    theta: np.ndarray,
    gains: np.ndarray,
    limits: np.ndarray,
) -> np.ndarray:
    """Model-inverting proportional controller: x(k+1) = x + gain * (ref - x)."""
    drift = step_array(x, np.zeros(N_X), theta, 0.0, 0.0) - x
    actuation = theta[[3, 6, 9]]
    tau = (gains * (ref - x) - drift) / actuation
    return np.clip(tau, -limits, limits)


def _zigzag_period(envelope: Envelope, duration: int, dt: float) -> float:
    if envelope.period is not None:
        return envelope.period
    # at least three full periods (plus switching lag) inside the record
    return duration * dt / 4.0


def _closed_loop(
    envelope: Envelope,
    params: VesselParams,
    duration: int,
    dt: float,
    settings: LibrarySection,
) -> Tuple[BodyVelocity, np.ndarray]:
    theta = params.as_array()
    gains = np.asarray(settings.gains.as_tuple())
    limits = np.asarray(settings.saturation.as_tuple())
    targets = envelope.targets()
    x = np.array([t.start_value() for t in targets])
    initial = BodyVelocity.from_array(x)

    zigzag = envelope.motion == "zigzag"
    amplitude_r = envelope.r.scale
    psi_max = amplitude_r * _zigzag_period(envelope, duration, dt) / 4.0
    direction = 1.0
    psi = 0.0

    signal = np.empty((duration, N_X))
    for k in range(duration):
        if zigzag:
            if direction * psi >= psi_max:
                direction = -direction
            ref = np.array([
                targets[0].reference(k, duration) * (1.0 + direction * settings.surge_dither),
                direction * envelope.v.scale if envelope.v.kind == "band" else envelope.v.amplitude,
                direction * amplitude_r,
            ])
        else:
            ref = np.array([t.reference(k, duration) for t in targets])
        tau = _control(x, ref, theta, gains, limits)
        signal[k] = tau
        psi += dt * x[2]
        x = step_array(x, tau, theta, 0.0, 0.0)
    return initial, signal


def _breakpoints(trajectory: np.ndarray, dt: float) -> Tuple[int, ...]:
    """Upward zero crossings of the heading, each snapped to the closer sample."""
    psi = np.unwrap(integrate_pose(trajectory, dt)[:-1, 2])
    points = [0]
    for k in range(1, len(psi)):
        if psi[k - 1] < 0.0 <= psi[k]:
            points.append(k if abs(psi[k]) <= abs(psi[k - 1]) else k - 1)
    return tuple(sorted(set(points)))


def check_envelope(
    envelope: Envelope,
    trajectory: np.ndarray,
    transient_fraction: float = 0.2,
    tolerance: float = 0.15,
) -> Optional[str]:
    """Name of the first channel leaving its envelope after the transient, or None."""
    start = int(math.ceil(transient_fraction * len(trajectory)))
    steady = trajectory[start:]
    for index, (name, target) in enumerate(zip(CHANNELS, envelope.targets())):
        lo, hi = target.bounds()
        margin = max(tolerance * target.scale, 1e-6)
        values = steady[:, index]
        if np.any(values < lo - margin) or np.any(values > hi + margin):
            return name
    return None


def synthesize_primitive(
    envelope: Envelope,
    params: VesselParams,
    duration: int = 300,
    dt: float = 1.0 / 8.0,
    settings: LibrarySection = LibrarySection(),
    check: bool = True,
) -> ExperimentPrimitive:
    if duration < 1:
        raise SynthesisError(envelope.label, "u", "needs a duration of at least one sample")
    initial, signal = _closed_loop(envelope, params, duration, dt, settings)
    trajectory = simulate(initial, signal, params).states

    if check:
        channel = check_envelope(envelope, trajectory, settings.transient_fraction, settings.tolerance)
        if channel is not None:
            raise SynthesisError(envelope.label, channel, f"leaves its envelope within {duration} samples")

    breakpoints = _breakpoints(trajectory, dt) if envelope.motion == "zigzag" else (0,)
    if envelope.motion == "zigzag" and len(breakpoints) < 2:
        raise SynthesisError(envelope.label, "r", f"completes no zig-zag period within {duration} samples")
    return ExperimentPrimitive(
        id=envelope.id,
        label=envelope.label,
        envelope=envelope,
        initial=initial,
        input_signal=signal,
        expected_trajectory=trajectory,
        breakpoints=breakpoints,
    )


def build_library(
    envelopes: Sequence[Envelope],
    params: VesselParams,
    dt: float,
    settings: LibrarySection = LibrarySection(),
) -> PrimitiveLibrary:
    primitives = tuple(
        synthesize_primitive(env, params, settings.duration, dt, settings) for env in envelopes
    )
    logger.info("[PRIMITIVES] synthesized %d primitives of %d samples", len(primitives), settings.duration)
    return PrimitiveLibrary(primitives)


def basic_maneuver(
    spec: BasicPrimitiveSpec,
    params: VesselParams,
    cell_size: float,
    dt: float,
    settings: LibrarySection = LibrarySection(),
) -> ExperimentPrimitive:
    """Input signal for a connecting maneuver; its lattice delta is declared, not derived."""
    dx, dy, dh = spec.delta
    if spec.u:
        seconds = math.hypot(dx, dy) * cell_size / abs(spec.u)
    elif spec.r:
        seconds = abs(dh) * (math.pi / 2.0) / abs(spec.r)
    else:
        seconds = dt
    envelope = Envelope(id=0, label=spec.name, motion="steady",
                        u=ChannelTarget(spec.u, spec.u), r=ChannelTarget(spec.r, spec.r))
    return synthesize_primitive(
        envelope, params, max(int(round(seconds / dt)), 1), dt, settings, check=False
    )


def displacement_summary(
    primitive: ExperimentPrimitive,
    dt: float,
    start: Pose = Pose(),
    segment: bool = False,
) -> Pose:
    """Net pose change from replaying the expected trajectory from ``start``."""
    trajectory = primitive.segment_trajectory() if segment else primitive.expected_trajectory
    return pose_change(trajectory, dt, start)


def pose_change(trajectory: np.ndarray, dt: float, start: Pose = Pose()) -> Pose:
    end = integrate_pose(trajectory, dt, start)[-1]
    return Pose(end[0] - start.x, end[1] - start.y, wrap_angle(end[2] - start.psi))
