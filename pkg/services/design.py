"""D-optimal allocation of experiment time over the primitive dictionary.

Summaries are time averages of regressor/instrument moments per primitive.
The allocation problem is posed over fractions rho on the probability
simplex; N_q = rho_q * N. Two information matrices are supported:

* ``basic``      T = sum_q N_q Gamma_q
* ``zero_mean``  T - S Zbar^T with T = sum_q N_q X_q, S = sum_q N_q Y_q and
                 Zbar = (1/N) sum_q N_q Z_q, which accounts for the instrument
                 mean being removed over the complete experiment.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.config import DESIGN_MODES
from services.errors import DatasetError, DictionaryDeficiencyError
from services.primitives import PrimitiveLibrary
from services.regression import NominalModel, build_regressors, generate_instruments
from services.vessel import DEFAULT_BOUND, N_THETA, BodyVelocity, DisturbanceConfig, VesselParams, simulate

logger = logging.getLogger(__name__)

MODES = DESIGN_MODES
ARMIJO = 1e-4


@dataclass(frozen=True, eq=False)
class InfoSummary:
    q: int
    gamma_bar: np.ndarray
    x_bar: np.ndarray
    y_bar: np.ndarray
    z_bar: np.ndarray
    n_samples_used: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "q": self.q,
            "gamma_bar": self.gamma_bar.tolist(),
            "x_bar": self.x_bar.tolist(),
            "y_bar": self.y_bar.tolist(),
            "z_bar": self.z_bar.tolist(),
            "n_samples_used": self.n_samples_used,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "InfoSummary":
        return cls(
            q=int(data["q"]),
            gamma_bar=np.asarray(data["gamma_bar"], dtype=float),
            x_bar=np.asarray(data["x_bar"], dtype=float),
            y_bar=np.asarray(data["y_bar"], dtype=float),
            z_bar=np.asarray(data["z_bar"], dtype=float),
            n_samples_used=int(data["n_samples_used"]),
        )


@dataclass(frozen=True, eq=False)
class Allocation:
    fractions: np.ndarray
    total_N: float
    objective_value: float
    mode: str = "zero_mean"

    @property
    def samples(self) -> np.ndarray:
        return self.fractions * self.total_N

    @property
    def singular(self) -> bool:
        return not math.isfinite(self.objective_value)

    def percentages(self, labels: Optional[Sequence[str]] = None) -> List[str]:
        """One line per used primitive, largest share first."""
        labels = labels or [f"tau{q + 1}" for q in range(len(self.fractions))]
        order = sorted(range(len(self.fractions)), key=lambda q: (-self.fractions[q], q))
        lines = []
        for q in order:
            share = 100.0 * self.fractions[q]
            if round(share) > 0:
                name = labels[q].split(":")[0]
                lines.append(f"{name} used for {share:.0f} % of the total experiment time")
        return lines

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fractions": [float(value) for value in self.fractions],
            "samples": [float(value) for value in self.samples],
            "total_N": float(self.total_N),
            "objective_value": float(self.objective_value) if not self.singular else None,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Allocation":
        value = data.get("objective_value")
        return cls(
            fractions=np.asarray(data["fractions"], dtype=float),
            total_N=float(data["total_N"]),
            objective_value=float(value) if value is not None else -math.inf,
            mode=data.get("mode", "zero_mean"),
        )


@dataclass(frozen=True)
class ScheduleEntry:
    q: int
    repetitions: int
    segment_length: int


@dataclass(frozen=True)
class Schedule:
    segments: Tuple[ScheduleEntry, ...]
    total_N: int

    @property
    def repetitions(self) -> Tuple[int, ...]:
        return tuple(entry.repetitions for entry in self.segments)

    @property
    def total_samples(self) -> int:
        return sum(entry.repetitions * entry.segment_length for entry in self.segments)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "segments": [
                {"q": e.q, "repetitions": e.repetitions, "segment_length": e.segment_length}
                for e in self.segments
            ],
            "total_N": self.total_N,
            "total_samples": self.total_samples,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Schedule":
        segments = tuple(
            ScheduleEntry(int(e["q"]), int(e["repetitions"]), int(e["segment_length"]))
            for e in data["segments"]
        )
        return cls(segments, int(data["total_N"]))


def estimate_summaries(
    q: int,
    phi: np.ndarray,
    z: np.ndarray,
    demeaned: bool = True,
    min_samples: int = 1,
) -> InfoSummary:
    """Moment summary of one primitive's regressors ``phi`` and instruments ``z``.

    With ``demeaned`` the information gain uses batchwise-demeaned instruments,
    gamma = X - Y Z^T; otherwise it uses the raw instruments, gamma = X.
    """
    phi = np.asarray(phi, dtype=float)
    z = np.asarray(z, dtype=float)
    if len(phi) == 0:
        raise DatasetError(f"primitive {q} has an empty dataset", stage="summaries")
    if len(phi) < min_samples:
        raise DatasetError(
            f"primitive {q} has {len(phi)} samples, at least {min_samples} are required",
            stage="summaries",
        )
    if phi.shape != z.shape:
        raise DatasetError(f"primitive {q}: regressors and instruments differ in shape", stage="summaries")
    x_bar = np.einsum("kia,kja->ij", phi, z) / len(phi)
    y_bar = phi.mean(axis=0)
    z_bar = z.mean(axis=0)
    gamma_bar = x_bar - y_bar @ z_bar.T if demeaned else x_bar
    return InfoSummary(q, gamma_bar, x_bar, y_bar, z_bar, len(phi))


def primitive_summaries(
    library: PrimitiveLibrary,
    params: VesselParams,
    nominal: NominalModel,
    disturbance: Optional[DisturbanceConfig] = None,
    demeaned: bool = True,
    min_samples: int = 50,
    bound: float = DEFAULT_BOUND,
) -> List[InfoSummary]:
    """Summaries from one simulated run of every primitive.

    Regressors come from the (optionally disturbed) run of ``params``;
    instruments from the nominal model started at the first measured output.
    """
    summaries = []
    for primitive in library:
        config = disturbance.with_seed(disturbance.seed + primitive.id) if disturbance else None
        run = simulate(primitive.initial, primitive.input_signal, params, config, bound)
        phi = build_regressors(run.outputs, run.tau)
        z = generate_instruments(run.tau, nominal, BodyVelocity.from_array(run.outputs[0]), bound)
        # the final sample has no successor and never enters an estimate
        summaries.append(estimate_summaries(primitive.id, phi[:-1], z[:-1], demeaned, min_samples))
    logger.info("[DESIGN] estimated %d summaries", len(summaries))
    return summaries


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown design mode '{mode}', expected one of {MODES}")


def _weighted(summaries: Sequence[InfoSummary], samples: np.ndarray, mode: str, total: float):
    if mode == "basic":
        return np.einsum("q,qij->ij", samples, np.stack([s.gamma_bar for s in summaries])), None, None
    t = np.einsum("q,qij->ij", samples, np.stack([s.x_bar for s in summaries]))
    s_mat = np.einsum("q,qij->ij", samples, np.stack([s.y_bar for s in summaries]))
    z_sum = np.einsum("q,qij->ij", samples, np.stack([s.z_bar for s in summaries]))
    z_mean = z_sum / total if total > 0 else np.zeros_like(z_sum)
    return t - s_mat @ z_mean.T, s_mat, z_mean


def info_matrix(
    samples,
    summaries: Sequence[InfoSummary],
    mode: str = "zero_mean",
    total_N: Optional[float] = None,
) -> np.ndarray:
    """Predicted information matrix for per-primitive sample counts N_q.

    ``samples`` is an Allocation or a vector of N_q. ``total_N`` fixes the N in
    Zbar = (1/N) sum N_q Z_q and defaults to sum N_q.
    """
    _check_mode(mode)
    if isinstance(samples, Allocation):
        total_N = samples.total_N if total_N is None else total_N
        samples = samples.samples
    samples = np.asarray(samples, dtype=float)
    if len(summaries) < len(samples):
        missing = [q + 1 for q in range(len(summaries), len(samples)) if samples[q] > 0]
        if missing:
            raise DatasetError(f"no summary for primitive(s) {missing}", stage="optimize")
        samples = samples[: len(summaries)]
    elif len(summaries) > len(samples):
        raise DatasetError(f"{len(samples)} sample counts for {len(summaries)} summaries", stage="optimize")
    total = float(np.sum(samples)) if total_N is None else float(total_N)
    matrix, _, _ = _weighted(summaries, samples, mode, total)
    return matrix


def log_abs_det(matrix: np.ndarray) -> float:
    """log|det M|; -inf when M is singular."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        return -math.inf
    sign, value = np.linalg.slogdet(matrix)
    return float(value) if sign != 0 else -math.inf


def objective(rho: np.ndarray, summaries: Sequence[InfoSummary], total_N: float, mode: str) -> float:
    return log_abs_det(info_matrix(np.asarray(rho) * total_N, summaries, mode, total_N))


def objective_gradient(rho: np.ndarray, summaries: Sequence[InfoSummary], total_N: float, mode: str) -> np.ndarray:
    """d log|det M| / d rho_q = tr(M^-1 dM/d rho_q)."""
    _check_mode(mode)
    rho = np.asarray(rho, dtype=float)
    samples = rho * total_N
    matrix, s_mat, z_mean = _weighted(summaries, samples, mode, total_N)
    inverse = np.linalg.inv(matrix)
    grad = np.empty(len(summaries))
    for q, summary in enumerate(summaries):
        if mode == "basic":
            d_matrix = total_N * summary.gamma_bar
        else:
            y_mean = s_mat / total_N
            d_matrix = total_N * (summary.x_bar - summary.y_bar @ z_mean.T - y_mean @ summary.z_bar.T)
        grad[q] = np.sum(inverse.T * d_matrix)
    return grad


def project_simplex(values: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {rho >= 0, sum rho = 1}."""
    values = np.asarray(values, dtype=float)
    ordered = np.sort(values)[::-1]
    cumulative = np.cumsum(ordered) - 1.0
    index = np.arange(1, len(values) + 1)
    support = ordered - cumulative / index > 0
    k = index[support][-1]
    shift = cumulative[k - 1] / k
    projected = np.maximum(values - shift, 0.0)
    return projected / projected.sum()


def _ascend(
    rho: np.ndarray,
    summaries: Sequence[InfoSummary],
    total_N: float,
    mode: str,
    max_iter: int,
    tol: float,
) -> Tuple[np.ndarray, float]:
    """Projected-gradient ascent with Armijo backtracking from a feasible point."""
    value = objective(rho, summaries, total_N, mode)
    if not math.isfinite(value):
        return rho, value
    step = None
    for _ in range(max_iter):
        grad = objective_gradient(rho, summaries, total_N, mode)
        if step is None:
            step = 0.1 / max(np.max(np.abs(grad)), 1e-12)
        else:
            step *= 2.0
        while True:
            candidate = project_simplex(rho + step * grad)
            move = candidate - rho
            new_value = objective(candidate, summaries, total_N, mode)
            if math.isfinite(new_value) and new_value >= value + ARMIJO * float(grad @ move):
                break
            step *= 0.5
            if step * max(np.max(np.abs(grad)), 1e-300) < 1e-14:
                return rho, value
        rho, value = candidate, new_value
        if np.linalg.norm(move) < tol:
            break
    return rho, value


def optimize_allocation(
    summaries: Sequence[InfoSummary],
    total_N: float,
    mode: str = "zero_mean",
    init: Optional[Sequence[float]] = None,
    starts: int = 16,
    max_iter: int = 500,
    tol: float = 1e-8,
    sanity_samples: int = 200,
    seed: int = 0,
) -> Allocation:
    """Locally D-optimal fractions via multi-start projected-gradient ascent.

    The first start is ``init`` (uniform by default); the rest are Dirichlet
    draws. The result also dominates ``sanity_samples`` random simplex points:
    whenever one of them scores higher, the ascent restarts from it.
    """
    _check_mode(mode)
    q_count = len(summaries)
    if q_count < 1:
        raise DictionaryDeficiencyError("the dictionary is empty")
    if total_N <= 0:
        raise ValueError("total_N must be positive")

    if init is None:
        init = np.full(q_count, 1.0 / q_count)
    init = np.asarray(init, dtype=float)
    if len(init) != q_count or np.any(init < -1e-9) or abs(init.sum() - 1.0) > 1e-9:
        raise ValueError("init must be a point on the simplex with one entry per primitive")
    init = project_simplex(init)

    if q_count == 1:
        value = objective(init, summaries, total_N, mode)
        if not math.isfinite(value):
            raise DictionaryDeficiencyError(
                f"the dictionary cannot excite all {N_THETA} parameter directions"
            )
        return Allocation(np.ones(1), float(total_N), value, mode)

    rng = np.random.default_rng(seed)
    points = [init] + [rng.dirichlet(np.ones(q_count)) for _ in range(max(starts, 1) - 1)]

    best_rho, best_value = init, -math.inf
    for index, point in enumerate(points):
        rho, value = _ascend(point, summaries, total_N, mode, max_iter, tol)
        logger.debug("[DESIGN] start %d -> %.6g", index, value)
        if value > best_value:
            best_rho, best_value = rho, value

    for sample in rng.dirichlet(np.ones(q_count), size=sanity_samples):
        value = objective(sample, summaries, total_N, mode)
        if value > best_value:
            rho, improved = _ascend(sample, summaries, total_N, mode, max_iter, tol)
            best_rho, best_value = rho, max(improved, value)

    if not math.isfinite(best_value):
        raise DictionaryDeficiencyError(
            f"every evaluated allocation is singular; the dictionary cannot excite all {N_THETA} parameter directions"
        )
    best_rho = np.where(best_rho < 1e-12, 0.0, best_rho)
    best_rho = best_rho / best_rho.sum()
    logger.info("[DESIGN] %s optimum log|det| = %.6g", mode, best_value)
    return Allocation(best_rho, float(total_N), objective(best_rho, summaries, total_N, mode), mode)


def _round_half_away(value: float) -> int:
    return int(math.floor(abs(value) + 0.5)) * (1 if value >= 0 else -1)


def realize_schedule(allocation: Allocation, segment_lengths: Sequence[int]) -> Schedule:
    """Integer repetitions n_q of segments of length N'_q with n_q N'_q close to N_q."""
    lengths = [int(length) for length in segment_lengths]
    if len(lengths) != len(allocation.fractions):
        raise ValueError("one segment length per primitive is required")
    if any(length < 1 for length in lengths):
        raise ValueError("segment lengths must be at least one sample")

    raw = allocation.samples / np.asarray(lengths, dtype=float)
    counts = [_round_half_away(value) for value in raw]
    remainder = raw - np.floor(raw)
    total = float(allocation.total_N)
    longest = max(lengths)

    def realized() -> int:
        return sum(n * length for n, length in zip(counts, lengths))

    while realized() - total > longest:
        candidates = [q for q in range(len(counts)) if counts[q] > 0 and raw[q] < counts[q]]
        candidates = candidates or [q for q in range(len(counts)) if counts[q] > 0]
        q = min(candidates, key=lambda i: (remainder[i], i))
        counts[q] -= 1
        remainder[q] = 1.0
    while total - realized() > longest:
        candidates = [q for q in range(len(counts)) if raw[q] > counts[q]] or list(range(len(counts)))
        q = max(candidates, key=lambda i: (remainder[i], -i))
        counts[q] += 1
        remainder[q] = 0.0

    segments = tuple(ScheduleEntry(q + 1, counts[q], lengths[q]) for q in range(len(counts)))
    return Schedule(segments, int(round(total)))
