"""Monte Carlo comparison of experiment designs, cross-validation metrics and
the sub-experiment resampling study.

The parameter metric of a run is the norm of the per-parameter errors
normalized by the true values, ``|theta_hat_i - theta_0_i| / |theta_0_i|``.
The CV metric is the RMSE per DOF between an open-loop simulation of the
estimated model and the undisturbed true system on a validation input.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.signal import chirp

from services.config import MonteCarloSection, ScenarioConfig, ValidationSection
from services.design import Allocation, optimize_allocation, primitive_summaries, realize_schedule
from services.errors import ShipDesignError, SimulationDivergenceError
from services.estimator import ThetaEstimate, ls_estimate, nominal_iv_estimate
from services.primitives import PrimitiveLibrary
from services.regression import NominalModel, RegressionDataset, demean_batchwise, demean_complete
from services.vessel import N_X, BodyVelocity, DisturbanceConfig, VesselParams, simulate

logger = logging.getLogger(__name__)

DESIGNS = ("optimized", "random", "uniform")
NORMALIZATION = "per-parameter error divided by |true value|, Euclidean norm over parameters"


def parameter_error(theta_hat: Sequence[float], theta0: Sequence[float]) -> float:
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    return float(np.linalg.norm(np.abs(theta_hat - theta0) / np.abs(theta0)))


@dataclass(frozen=True, eq=False)
class CVResult:
    rmse: np.ndarray
    degenerate: bool = False
    divergence_step: Optional[int] = None

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.rmse)) if not self.degenerate else math.nan

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rmse": {name: _finite_or_none(value) for name, value in zip(("u", "v", "r"), self.rmse)},
            "norm": _finite_or_none(self.norm),
            "degenerate": self.degenerate,
            "divergence_step": self.divergence_step,
        }


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def validation_signal(section: ValidationSection, dt: float) -> np.ndarray:
    """Chirp excitation in surge, sway and yaw, distinct from every primitive."""
    t = np.arange(section.length) * dt
    t1 = max(t[-1], dt)
    tau = np.empty((section.length, N_X))
    tau[:, 0] = section.tau1_mean + section.tau1_amplitude * chirp(t, section.f0, t1, section.f1)
    tau[:, 1] = section.tau2_amplitude * chirp(t, section.f0, t1, section.f1, phi=90.0)
    tau[:, 2] = section.tau3_amplitude * chirp(t, section.f0, t1, section.f1, phi=-90.0)
    return tau


def cv_validate(
    theta_hat: Sequence[float],
    params: VesselParams,
    validation_input: np.ndarray,
    initial: BodyVelocity = BodyVelocity(),
    bound: float = 1e3,
    reference: Optional[np.ndarray] = None,
) -> CVResult:
    """Open-loop simulation of ``theta_hat`` against the undisturbed true states.

    ``reference`` may carry precomputed true states for ``validation_input``.
    A simulation that stays inside ``bound`` is scored with its RMSE however
    large it is; leaving the bound or producing a non-finite RMSE marks the
    run degenerate.
    """
    if reference is None:
        reference = simulate(initial, validation_input, params, bound=bound).states
    theta_hat = np.asarray(theta_hat, dtype=float)
    if not np.all(np.isfinite(theta_hat)):
        return CVResult(np.full(N_X, math.nan), True, 0)
    try:
        estimated = simulate(initial, validation_input, VesselParams.from_array(theta_hat), bound=bound).states
    except SimulationDivergenceError as exc:
        return CVResult(np.full(N_X, math.nan), True, exc.step)
    with np.errstate(over="ignore", invalid="ignore"):
        rmse = np.sqrt(np.mean((estimated - reference) ** 2, axis=0))
    if not np.all(np.isfinite(rmse)):
        return CVResult(np.full(N_X, math.nan), True)
    return CVResult(rmse)


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    design: str
    seeds: Tuple[int, ...]
    param_errors: np.ndarray
    cv_errors: np.ndarray
    degenerate: np.ndarray
    notes: Dict[str, Any] = field(default_factory=dict)

    @property
    def runs(self) -> int:
        return len(self.seeds)

    @property
    def cv_norms(self) -> np.ndarray:
        return np.linalg.norm(self.cv_errors, axis=1)

    def fraction_below(self, threshold: float, metric: str = "param") -> float:
        """Share of runs under ``threshold``; degenerate runs never count."""
        values = self.param_errors if metric == "param" else self.cv_norms
        ok = np.isfinite(values) & ~self.degenerate & (values < threshold)
        return float(np.mean(ok)) if len(values) else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "run": np.arange(self.runs),
            "seed": list(self.seeds),
            "design": self.design,
            "param_error": self.param_errors,
            "cv_u": self.cv_errors[:, 0],
            "cv_v": self.cv_errors[:, 1],
            "cv_r": self.cv_errors[:, 2],
            "cv_norm": self.cv_norms,
            "degenerate": self.degenerate,
        })

    def plot_frame(self, settings: MonteCarloSection = MonteCarloSection()) -> pd.DataFrame:
        """Metrics with the display truncation applied; raw metrics stay untouched."""
        frame = self.to_frame()
        frame["param_error"] = frame["param_error"].clip(upper=settings.param_truncation)
        for column, level in zip(("cv_u", "cv_v", "cv_r"), settings.cv_truncation):
            frame[column] = frame[column].clip(upper=level)
        frame["cv_norm"] = frame["cv_norm"].clip(upper=settings.cv_norm_truncation)
        return frame

    def summary(self, settings: MonteCarloSection = MonteCarloSection()) -> Dict[str, Any]:
        finite = self.param_errors[np.isfinite(self.param_errors)]
        cv = self.cv_norms[np.isfinite(self.cv_norms)]
        return {
            "design": self.design,
            "runs": self.runs,
            "degenerate_runs": int(self.degenerate.sum()),
            "normalization": NORMALIZATION,
            "param_threshold": settings.param_threshold,
            "fraction_param_below": self.fraction_below(settings.param_threshold, "param"),
            "cv_threshold": settings.cv_threshold,
            "fraction_cv_below": self.fraction_below(settings.cv_threshold, "cv"),
            "median_param_error": float(np.median(finite)) if len(finite) else None,
            "median_cv_norm": float(np.median(cv)) if len(cv) else None,
            **self.notes,
        }


def design_signal(
    library: PrimitiveLibrary,
    fractions: Sequence[float],
    total_n: int,
) -> Tuple[np.ndarray, np.ndarray, BodyVelocity]:
    """First round(rho_q N) samples of every used primitive, cycled when short.

    Returns the input, per-sample segment labels (primitive ids) and the
    initial state of the first used primitive.
    """
    pieces, labels, initial = [], [], None
    for q, rho in enumerate(fractions, start=1):
        count = int(round(float(rho) * total_n))
        if count <= 0:
            continue
        signal = library.get(q).input_signal
        repeats = -(-count // len(signal))
        pieces.append(np.tile(signal, (repeats, 1))[:count])
        labels.append(np.full(count, q))
        if initial is None:
            initial = library.get(q).initial
    if not pieces:
        raise ShipDesignError("the allocation selects no primitive", stage="montecarlo")
    return np.concatenate(pieces), np.concatenate(labels), initial


def random_design_signal(
    library: PrimitiveLibrary,
    rng: np.random.Generator,
    segments: int = 5,
    length: int = 200,
) -> Tuple[np.ndarray, np.ndarray, BodyVelocity]:
    """``segments`` primitives drawn with replacement, in random order."""
    chosen = rng.integers(1, library.Q + 1, size=segments)
    pieces, labels = [], []
    for index, q in enumerate(chosen):
        signal = library.get(int(q)).input_signal
        repeats = -(-length // len(signal))
        pieces.append(np.tile(signal, (repeats, 1))[:length])
        labels.append(np.full(length, index))
    return np.concatenate(pieces), np.concatenate(labels), library.get(int(chosen[0])).initial


def simulate_design(
    tau: np.ndarray,
    segments: np.ndarray,
    initial: BodyVelocity,
    params: VesselParams,
    disturbance: DisturbanceConfig,
    bound: float = 1e3,
) -> RegressionDataset:
    run = simulate(initial, tau, params, disturbance, bound)
    return RegressionDataset(run.outputs, run.tau, segments)


def _evaluate(
    dataset: RegressionDataset,
    nominal: NominalModel,
    params: VesselParams,
    validation_input: np.ndarray,
    reference: np.ndarray,
    bound: float,
) -> Tuple[float, CVResult]:
    try:
        estimate = nominal_iv_estimate(dataset, nominal, "complete", bound)
    except (ShipDesignError, np.linalg.LinAlgError) as exc:
        logger.debug("[MONTECARLO] degenerate run: %s", exc)
        return math.nan, CVResult(np.full(N_X, math.nan), True)
    error = parameter_error(estimate.theta_hat, params.as_array())
    cv = cv_validate(estimate.theta_hat, params, validation_input, bound=bound, reference=reference)
    return error, cv


def _collect(design: str, seeds, outcomes, notes=None) -> MonteCarloReport:
    errors = np.array([o[0] for o in outcomes], dtype=float)
    cv = np.array([o[1].rmse for o in outcomes], dtype=float).reshape(-1, N_X)
    degenerate = np.array([o[1].degenerate or not math.isfinite(o[0]) for o in outcomes], dtype=bool)
    return MonteCarloReport(design, tuple(int(s) for s in seeds), errors, cv, degenerate, notes or {})


def run_seeds(seed: int, runs: int) -> np.ndarray:
    """One independent disturbance seed per run."""
    return np.random.SeedSequence(seed).generate_state(runs).astype(np.int64)


def run_monte_carlo(
    config: ScenarioConfig,
    library: PrimitiveLibrary,
    allocation: Optional[Allocation] = None,
    designs: Sequence[str] = ("optimized", "random"),
    runs: Optional[int] = None,
) -> Dict[str, MonteCarloReport]:
    """Estimate the vessel once per run and design; returns one report per design.

    Every design sees the same disturbance seeds. The optimized design keeps
    ``allocation`` fixed across runs; the random design redraws its segments.
    """
    mc = config.montecarlo
    runs = mc.runs if runs is None else runs
    params = config.vessel.params
    bound = config.vessel.bound
    nominal = NominalModel(config.nominal)
    dt = config.vessel.dt
    validation_input = validation_signal(config.validation, dt)
    reference = simulate(BodyVelocity(), validation_input, params, bound=bound).states
    seeds = run_seeds(mc.seed, runs)

    unknown = set(designs) - set(DESIGNS)
    if unknown:
        raise ShipDesignError(f"unknown design(s) {sorted(unknown)}", stage="montecarlo")
    if allocation is None and "optimized" in designs:
        summaries = primitive_summaries(library, params, nominal, min_samples=config.design.min_samples, bound=bound)
        allocation = optimize_allocation(
            summaries, config.design.total_n, config.design.mode,
            starts=config.design.starts, max_iter=config.design.max_iter, tol=config.design.tol,
            sanity_samples=config.design.sanity_samples, seed=config.design.seed,
        )

    reports = {}
    for design in designs:
        outcomes = []
        for index, seed in enumerate(seeds):
            disturbance = config.disturbance.with_seed(int(seed))
            if design == "random":
                rng = np.random.default_rng([int(seed), 1])
                tau, labels, initial = random_design_signal(library, rng, mc.random_segments, mc.segment_length)
            else:
                fractions = allocation.fractions if design == "optimized" else np.full(library.Q, 1.0 / library.Q)
                tau, labels, initial = design_signal(library, fractions, config.design.total_n)
            dataset = simulate_design(tau, labels, initial, params, disturbance, bound)
            outcomes.append(_evaluate(dataset, nominal, params, validation_input, reference, bound))
        report = _collect(design, seeds, outcomes)
        logger.info(
            "[MONTECARLO] %s: %d runs, %.1f %% below %.3g",
            design, runs, 100.0 * report.fraction_below(mc.param_threshold), mc.param_threshold,
        )
        reports[design] = report
    return reports


def example_input(
    n: int,
    u_bar: float,
    rng: np.random.Generator,
    sigma_u: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Scalar input u = u_tilde +/- u_bar, the sign switching halfway.

    ``u_tilde`` has zero mean and repeats in both halves, so u has zero mean.
    """
    if n < 2 or n % 2:
        raise ValueError("n must be an even number of at least 2")
    half = rng.normal(0.0, sigma_u, size=n // 2)
    half -= half.mean()
    u_tilde = np.concatenate([half, half])
    offset = np.concatenate([np.full(n // 2, u_bar), np.full(n // 2, -u_bar)])
    return u_tilde + offset, u_tilde


def example_estimates(y: np.ndarray, u: np.ndarray) -> Tuple[float, float]:
    """Scalar IV estimates with completely and batchwise demeaned instruments."""
    halves = [u[: len(u) // 2], u[len(u) // 2:]]
    zeta_complete = np.concatenate(demean_complete(halves))
    zeta_batchwise = np.concatenate(demean_batchwise(halves))
    theta_complete = float(zeta_complete @ y / (zeta_complete @ u))
    theta_batchwise = float(zeta_batchwise @ y / (zeta_batchwise @ u))
    return theta_complete, theta_batchwise


def zero_mean_variance_study(
    seeds: int = 1000,
    n: int = 200,
    theta0: float = 1.0,
    sigma_e: float = 1.0,
    u_bar: Optional[float] = None,
    seed: int = 0,
) -> Dict[str, float]:
    """Variance of the two scalar estimates over independent noise draws."""
    u_bar = 5.0 * sigma_e if u_bar is None else u_bar
    estimates = np.empty((seeds, 2))
    for index, child in enumerate(np.random.SeedSequence(seed).spawn(seeds)):
        rng = np.random.default_rng(child)
        u, _ = example_input(n, u_bar, rng)
        y = theta0 * u + rng.normal(0.0, sigma_e, size=n)
        estimates[index] = example_estimates(y, u)
    return {
        "u_bar": float(u_bar),
        "sigma_e": float(sigma_e),
        "mean_complete": float(estimates[:, 0].mean()),
        "mean_batchwise": float(estimates[:, 1].mean()),
        "var_complete": float(estimates[:, 0].var(ddof=1)),
        "var_batchwise": float(estimates[:, 1].var(ddof=1)),
    }


def collect_subexperiments(
    library: PrimitiveLibrary,
    params: VesselParams,
    disturbance: DisturbanceConfig,
    parts: int = 5,
    length: int = 75,
    bound: float = 1e3,
) -> Tuple[RegressionDataset, np.ndarray]:
    """Simulate every primitive once and cut the record into ``parts`` sub-experiments.

    Each sub-experiment is its own run and batch. Returns the dataset and the
    primitive id owning each run.
    """
    datasets, owners = [], []
    for primitive in library:
        count = parts * length
        signal = primitive.input_signal
        tau = np.tile(signal, (-(-count // len(signal)), 1))[:count]
        run = simulate(primitive.initial, tau, params, disturbance.with_seed(disturbance.seed + primitive.id), bound)
        for part in range(parts):
            window = slice(part * length, (part + 1) * length)
            datasets.append(RegressionDataset(run.outputs[window], run.tau[window]))
            owners.append(primitive.id)
    return RegressionDataset.concatenate(datasets), np.asarray(owners)


def _subexperiment_cv(theta_hat: np.ndarray, data: RegressionDataset, bound: float) -> CVResult:
    """Mean RMSE per DOF of the open-loop model over all sub-experiments."""
    if not np.all(np.isfinite(theta_hat)):
        return CVResult(np.full(N_X, math.nan), True, 0)
    model = VesselParams.from_array(theta_hat)
    squared = np.zeros(N_X)
    count = 0
    for idx in data.runs():
        try:
            sim = simulate(BodyVelocity.from_array(data.y[idx[0]]), data.tau[idx], model, bound=bound).states
        except SimulationDivergenceError as exc:
            return CVResult(np.full(N_X, math.nan), True, exc.step)
        squared += np.sum((sim - data.y[idx]) ** 2, axis=0)
        count += len(idx)
    return CVResult(np.sqrt(squared / count))


def _pick_runs(data: RegressionDataset, chosen: Sequence[int]) -> RegressionDataset:
    return RegressionDataset.concatenate([data.subset(data.run == run) for run in chosen])


def run_resampling_study(
    config: ScenarioConfig,
    library: PrimitiveLibrary,
    pick: int = 6,
    resamples: Optional[int] = None,
) -> Dict[str, MonteCarloReport]:
    """Compose small designs out of recorded sub-experiments and compare them.

    A least-squares fit over every sub-experiment serves as nominal model for
    both the design summaries and the instruments.
    """
    mc = config.montecarlo
    resamples = mc.resamples if resamples is None else resamples
    params = config.vessel.params
    bound = config.vessel.bound
    data, owners = collect_subexperiments(
        library, params, config.disturbance, mc.parts_per_primitive, mc.part_length, bound,
    )
    bootstrap: ThetaEstimate = ls_estimate(data)
    nominal = NominalModel.from_params(bootstrap.params)
    try:
        summaries = primitive_summaries(
            library, nominal.params, nominal, min_samples=config.design.min_samples, bound=bound,
        )
    except SimulationDivergenceError as exc:
        raise ShipDesignError(f"least-squares nominal model diverges: {exc.message}", stage="montecarlo")
    allocation = optimize_allocation(
        summaries, pick * mc.part_length, config.design.mode,
        starts=config.design.starts, max_iter=config.design.max_iter, tol=config.design.tol,
        sanity_samples=config.design.sanity_samples, seed=config.design.seed,
    )
    counts = realize_schedule(allocation, [mc.part_length] * library.Q).repetitions
    logger.info("[MONTECARLO] resampling composition %s", list(counts))

    by_owner = {q: np.flatnonzero(owners == q) for q in range(1, library.Q + 1)}
    seeds = run_seeds(mc.seed, resamples)
    outcomes = {"optimized": [], "random": []}
    for seed in seeds:
        rng = np.random.default_rng([int(seed), 2])
        chosen = []
        for q, count in enumerate(counts, start=1):
            if count:
                runs = by_owner[q]
                chosen.extend(rng.choice(runs, size=count, replace=count > len(runs)).tolist())
        random_pick = rng.choice(len(owners), size=min(pick, len(owners)), replace=False).tolist()
        for design, runs in (("optimized", chosen), ("random", random_pick)):
            subset = _pick_runs(data, runs)
            try:
                estimate = nominal_iv_estimate(subset, nominal, "complete", bound)
            except (ShipDesignError, np.linalg.LinAlgError):
                outcomes[design].append((math.nan, CVResult(np.full(N_X, math.nan), True)))
                continue
            outcomes[design].append((
                parameter_error(estimate.theta_hat, params.as_array()),
                _subexperiment_cv(estimate.theta_hat, data, bound),
            ))
    notes = {"composition": [int(c) for c in counts], "sub_experiments": int(len(owners))}
    return {design: _collect(design, seeds, outcomes[design], notes) for design in outcomes}
