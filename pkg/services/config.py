"""Scenario configuration.

A scenario is one JSON document mapped onto frozen dataclasses. Every field
has a default taken from the model-ship setup (the shipped model-ship scenario
only sharpens the synthesis of its dictionary), so an empty document is valid.
Unknown keys and out-of-range choices are rejected as configuration errors.
"""
import json
import math
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from services.errors import ConfigError
from services.vessel import DisturbanceConfig, VesselParams

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

# Crude nominal model used to generate instruments: linear damping and
# actuation only, every nonlinear coupling set to zero.
CRUDE_NOMINAL = (-0.08, 0.0, 0.0, 1e-5, -0.08, 0.0, 1e-5, -0.4, 0.0, 3.5e-4)

DESIGN_MODES = ("basic", "zero_mean")
LATTICE_HEADINGS = 4


@dataclass(frozen=True)
class SaturationLimits:
    tau1: float = 12000.0
    tau2: float = 6000.0
    tau3: float = 2500.0

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.tau1, self.tau2, self.tau3)


@dataclass(frozen=True)
class ControllerGains:
    """Per-channel first-order tracking rates of the reference controllers."""

    u: float = 0.1
    v: float = 0.25
    r: float = 0.25

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.u, self.v, self.r)


@dataclass(frozen=True)
class VesselSection:
    params: VesselParams = field(default_factory=VesselParams.reference)
    sample_rate: float = 8.0
    bound: float = 1e3

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate


@dataclass(frozen=True)
class LibrarySection:
    envelopes: str = "model_ship_envelopes.json"
    duration: int = 300
    saturation: SaturationLimits = field(default_factory=SaturationLimits)
    gains: ControllerGains = field(default_factory=ControllerGains)
    transient_fraction: float = 0.2
    tolerance: float = 0.15
    # relative step of the zig-zag speed reference, flipped at every heading switch
    surge_dither: float = 0.0


@dataclass(frozen=True)
class DesignSection:
    mode: str = "zero_mean"
    total_n: int = 1000
    starts: int = 16
    max_iter: int = 500
    tol: float = 1e-8
    sanity_samples: int = 200
    min_samples: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.mode not in DESIGN_MODES:
            raise ValueError(f"unknown design mode '{self.mode}', expected one of {DESIGN_MODES}")
        if self.total_n <= 0:
            raise ValueError("total_n must be positive")


@dataclass(frozen=True)
class MonteCarloSection:
    runs: int = 500
    seed: int = 1000
    random_segments: int = 5
    segment_length: int = 200
    param_threshold: float = 5.0
    cv_threshold: float = 0.15
    param_truncation: float = 25.0
    cv_truncation: Tuple[float, float, float] = (1.0, 0.25, 0.15)
    cv_norm_truncation: float = 0.5
    parts_per_primitive: int = 5
    part_length: int = 75
    resamples: int = 500


@dataclass(frozen=True)
class ValidationSection:
    """Chirp excitation distinct from every dictionary entry.

    Sway and yaw carry most of the excitation on top of a slow surge level.
    """

    length: int = 1000
    tau1_mean: float = 1500.0
    tau1_amplitude: float = 500.0
    tau2_amplitude: float = 3000.0
    tau3_amplitude: float = 600.0
    f0: float = 0.01
    f1: float = 0.3


@dataclass(frozen=True)
class BasicPrimitiveSpec:
    name: str = "straight"
    delta: Tuple[int, int, int] = (1, 0, 0)
    u: float = 0.5
    r: float = 0.0


@dataclass(frozen=True)
class PlanningSection:
    map: Optional[str] = "reference_map.txt"
    cell_size: float = 1.0
    headings: int = 4
    start: Tuple[int, int, int] = (2, 41, 0)
    goal: Tuple[int, int, int] = (4, 3, 0)
    weights: Optional[Tuple[float, float, float]] = None
    basic_cost: float = 1.0
    inflation: float = 0.5
    box_stride: int = 8
    max_expansions: int = 2_000_000
    basic: Tuple[BasicPrimitiveSpec, ...] = (
        BasicPrimitiveSpec("straight", (1, 0, 0), u=0.5, r=0.0),
        BasicPrimitiveSpec("rotate_left", (0, 0, 1), u=0.0, r=0.3),
        BasicPrimitiveSpec("rotate_right", (0, 0, -1), u=0.0, r=-0.3),
    )

    def __post_init__(self):
        if self.headings != LATTICE_HEADINGS:
            raise ValueError(f"only {LATTICE_HEADINGS} lattice headings are supported, got {self.headings}")

    @property
    def heuristic_weights(self) -> Tuple[float, float, float]:
        if self.weights is not None:
            return self.weights
        return (1.0, 0.5 * self.cell_size, 5.0 * self.cell_size)


@dataclass(frozen=True)
class ScenarioConfig:
    vessel: VesselSection = field(default_factory=VesselSection)
    nominal: Tuple[float, ...] = CRUDE_NOMINAL
    disturbance: DisturbanceConfig = field(
        default_factory=lambda: DisturbanceConfig(sigma_current=0.025, sigma_meas=0.025, seed=0)
    )
    library: LibrarySection = field(default_factory=LibrarySection)
    design: DesignSection = field(default_factory=DesignSection)
    montecarlo: MonteCarloSection = field(default_factory=MonteCarloSection)
    validation: ValidationSection = field(default_factory=ValidationSection)
    planning: PlanningSection = field(default_factory=PlanningSection)
    base_dir: Path = DATA_DIR

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"scenario file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario file {path} is not valid JSON: {exc}")
        return cls.from_dict(data, base_dir=path.resolve().parent)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[Path] = None) -> "ScenarioConfig":
        data = dict(data or {})
        if "base_dir" in data:
            raise ConfigError("'base_dir' cannot be set from a scenario document")
        config = _build(cls(), data, "scenario")
        return replace(config, base_dir=Path(base_dir) if base_dir else DATA_DIR)

    def resolve(self, relative: str) -> Path:
        """Resolve a scenario path, falling back to the shipped data directory."""
        candidate = Path(relative)
        if candidate.is_absolute():
            return candidate
        local = self.base_dir / candidate
        return local if local.exists() else DATA_DIR / candidate

    def with_seed(self, seed: Optional[int]) -> "ScenarioConfig":
        if seed is None:
            return self
        return replace(
            self,
            disturbance=self.disturbance.with_seed(seed),
            design=replace(self.design, seed=seed),
            montecarlo=replace(self.montecarlo, seed=seed),
        )

    def to_dict(self) -> Dict[str, Any]:
        return _dump(self)


def _build(default: Any, data: Any, where: str):
    """Overlay ``data`` on the ``default`` instance, recursing into sections."""
    if not isinstance(data, dict):
        raise ConfigError(f"section '{where}' must be an object")
    known = {f.name for f in fields(default) if f.name != "base_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in '{where}'")

    kwargs: Dict[str, Any] = {}
    for name, value in data.items():
        current = getattr(default, name)
        path = f"{where}.{name}"
        if is_dataclass(current):
            kwargs[name] = _build(current, value, path)
        elif name == "basic":
            kwargs[name] = tuple(_build(BasicPrimitiveSpec(), item, path) for item in value)
        elif isinstance(current, tuple) or (name == "weights" and value is not None):
            kwargs[name] = tuple(_coerce(item, path) for item in value)
        elif isinstance(default, VesselParams):
            kwargs[name] = float(_coerce(value, path))
        else:
            kwargs[name] = value
    try:
        return replace(default, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid values in '{where}': {exc}")


def _coerce(value: Any, where: str):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"non-finite value in '{where}'")
        return value
    if isinstance(value, list):
        return tuple(value)
    raise ConfigError(f"expected numbers in '{where}', got {value!r}")


def _dump(obj: Any) -> Any:
    if isinstance(obj, VesselParams):
        return obj.to_dict()
    if is_dataclass(obj):
        return {f.name: _dump(getattr(obj, f.name)) for f in fields(obj) if f.name != "base_dir"}
    if isinstance(obj, tuple):
        return [_dump(item) for item in obj]
    return obj
