"""Exception hierarchy shared by the services and both outer surfaces.

Each error carries the pipeline ``stage`` it belongs to and the CLI exit code
for that stage, so the HTTP layer and the command group can report failures
without inspecting exception types.
"""
from typing import Dict, Optional, Sequence

EXIT_CODES: Dict[str, int] = {
    "config": 2,
    "simulate": 3,
    "summaries": 4,
    "optimize": 5,
    "schedule": 6,
    "plan": 7,
    "estimate": 8,
    "validate": 9,
    "montecarlo": 10,
}


class ShipDesignError(Exception):
    """Base class for every domain failure."""

    default_stage = "simulate"

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.stage = stage or self.default_stage

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.stage, 1)

    def to_dict(self) -> Dict[str, object]:
        return {"error": type(self).__name__, "stage": self.stage, "message": self.message}


class ConfigError(ShipDesignError):
    default_stage = "config"


class NonFiniteInputError(ShipDesignError):
    def __init__(self, field: str, stage: Optional[str] = None):
        super().__init__(f"non-finite value in '{field}'", stage)
        self.field = field


class SimulationDivergenceError(ShipDesignError):
    def __init__(self, step: int, bound: float, stage: Optional[str] = None):
        super().__init__(f"simulation diverged at step {step} (|state| > {bound:g})", stage)
        self.step = step
        self.bound = bound


class SynthesisError(ShipDesignError):
    def __init__(self, label: str, channel: str, detail: str, stage: Optional[str] = None):
        super().__init__(f"cannot synthesize '{label}': channel {channel} {detail}", stage)
        self.label = label
        self.channel = channel


class DatasetError(ShipDesignError):
    default_stage = "estimate"


class InstrumentGenerationError(ShipDesignError):
    default_stage = "estimate"

    def __init__(self, step: int, stage: Optional[str] = None):
        super().__init__(
            f"nominal model diverged at step {step}; the nominal parameters are too crude",
            stage,
        )
        self.step = step


class NonInformativeDataError(ShipDesignError):
    default_stage = "estimate"

    def __init__(self, rank: int, n_theta: int, worst_block: str, stage: Optional[str] = None):
        super().__init__(
            f"data not informative: rank {rank} < {n_theta}, worst-conditioned block '{worst_block}'",
            stage,
        )
        self.rank = rank
        self.worst_block = worst_block


class DictionaryDeficiencyError(ShipDesignError):
    default_stage = "optimize"


class NonRepresentablePrimitiveError(ShipDesignError):
    default_stage = "plan"


class PlanningInfeasibleError(ShipDesignError):
    default_stage = "plan"

    def __init__(self, reached: Sequence[int], expanded: int, stage: Optional[str] = None):
        super().__init__(
            f"no plan found after {expanded} expansions; maximal counters reached {list(reached)}",
            stage,
        )
        self.reached = tuple(reached)
        self.expanded = expanded
