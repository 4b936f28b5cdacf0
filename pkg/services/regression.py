"""Predictor-model regressors, nominal-model instruments and instrument demeaning.

Regressor matrices are stored as arrays of shape (L, 10, 3): row index is the
parameter, column index the output channel. Column 0 holds the surge block
(rows 0-3), column 1 the sway block (rows 4-6) and column 2 the yaw block
(rows 7-9); every other entry is zero.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence, Tuple

import numpy as np
import pandas as pd

from services.errors import DatasetError, InstrumentGenerationError, SimulationDivergenceError
from services.vessel import DEFAULT_BOUND, N_THETA, N_X, BodyVelocity, VesselParams, simulate

logger = logging.getLogger(__name__)

BLOCKS = (("surge", 0, 4), ("sway", 4, 7), ("yaw", 7, 10))
SCHEMES = ("none", "batchwise", "complete")


@dataclass(frozen=True)
class RegressionRecord:
    k: int
    y: np.ndarray
    phi: np.ndarray


@dataclass(frozen=True)
class InstrumentRecord:
    k: int
    z: np.ndarray


@dataclass(frozen=True)
class NominalModel:
    """Crude parameter guess used only to simulate instruments."""

    theta_prime: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(value) for value in self.theta_prime)
        if len(values) != N_THETA:
            raise ValueError(f"nominal model needs {N_THETA} parameters, got {len(values)}")
        if not np.all(np.isfinite(values)):
            raise ValueError("nominal model parameters must be finite")
        object.__setattr__(self, "theta_prime", values)

    @property
    def params(self) -> VesselParams:
        return VesselParams.from_array(self.theta_prime)

    @classmethod
    def from_params(cls, params: VesselParams) -> "NominalModel":
        return cls(tuple(params.as_array()))


def build_regressors(y, tau) -> np.ndarray:
    """Regressor matrices Phi(k) for every sample, shape (L, 10, 3)."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    tau = np.atleast_2d(np.asarray(tau, dtype=float))
    if y.shape != tau.shape:
        raise DatasetError(f"outputs {y.shape} and inputs {tau.shape} differ in shape")
    if y.shape[0] < 1 or y.shape[1] != N_X:
        raise DatasetError(f"expected at least one sample of {N_X} channels, got {y.shape}")

    y1, y2, y3 = y[:, 0], y[:, 1], y[:, 2]
    phi = np.zeros((len(y), N_THETA, N_X))
    phi[:, 0, 0] = y1
    phi[:, 1, 0] = y1 * np.abs(y1)
    phi[:, 2, 0] = y2 * y3
    phi[:, 3, 0] = tau[:, 0]
    phi[:, 4, 1] = y2
    phi[:, 5, 1] = y1 * y3
    phi[:, 6, 1] = tau[:, 1]
    phi[:, 7, 2] = y3
    phi[:, 8, 2] = y1 * y2
    phi[:, 9, 2] = tau[:, 2]
    return phi


def generate_instruments(
    tau,
    nominal: NominalModel,
    initial: BodyVelocity,
    bound: float = DEFAULT_BOUND,
) -> np.ndarray:
    """Instrument matrices Z(k): regressors of the noise-free nominal simulation."""
    try:
        trajectory = simulate(initial, tau, nominal.params, bound=bound)
    except SimulationDivergenceError as exc:
        raise InstrumentGenerationError(exc.step)
    return build_regressors(trajectory.states, trajectory.tau)


def _check_batches(batches: Sequence[np.ndarray]) -> List[np.ndarray]:
    arrays = [np.asarray(batch, dtype=float) for batch in batches]
    if not arrays:
        raise DatasetError("no instrument batches given")
    for index, batch in enumerate(arrays):
        if batch.ndim == 0 or len(batch) == 0:
            raise DatasetError(f"instrument batch {index} is empty")
    return arrays


def demean_batchwise(batches: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Subtract each batch's own time mean."""
    return [batch - batch.mean(axis=0) for batch in _check_batches(batches)]


def demean_complete(batches: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Subtract the mean over the concatenation of all batches."""
    arrays = _check_batches(batches)
    grand = np.concatenate(arrays, axis=0).mean(axis=0)
    return [batch - grand for batch in arrays]


def split_batches(values: np.ndarray, labels: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Split along time by contiguous label runs; returns (batches, index arrays)."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return [], []
    starts = np.flatnonzero(np.r_[True, labels[1:] != labels[:-1]])
    stops = np.r_[starts[1:], len(labels)]
    indices = [np.arange(a, b) for a, b in zip(starts, stops)]
    return [values[idx] for idx in indices], indices


def demean(z: np.ndarray, segments: Sequence[int], scheme: str = "complete") -> np.ndarray:
    """Apply a demeaning scheme to a time-indexed instrument array."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown demeaning scheme '{scheme}', expected one of {SCHEMES}")
    if scheme == "none":
        return np.array(z, dtype=float)
    batches, indices = split_batches(np.asarray(z, dtype=float), np.asarray(segments))
    demeaned = demean_batchwise(batches) if scheme == "batchwise" else demean_complete(batches)
    out = np.empty_like(np.asarray(z, dtype=float))
    for idx, batch in zip(indices, demeaned):
        out[idx] = batch
    return out


@dataclass(frozen=True, eq=False)
class RegressionDataset:
    """Measured outputs and applied inputs of one or more experiment runs.

    ``run`` labels continuous simulations (a new run restarts the vessel state)
    and ``segment`` labels sub-experiments used as demeaning batches. Only
    sample pairs (k, k + 1) inside one run enter the estimator.
    """

    y: np.ndarray
    tau: np.ndarray
    segment: np.ndarray = field(default=None)
    run: np.ndarray = field(default=None)

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        tau = np.atleast_2d(np.asarray(self.tau, dtype=float))
        if y.shape != tau.shape:
            raise DatasetError(f"outputs {y.shape} and inputs {tau.shape} differ in shape")
        length = len(y)
        segment = np.zeros(length, dtype=int) if self.segment is None else np.asarray(self.segment, dtype=int)
        run = np.zeros(length, dtype=int) if self.run is None else np.asarray(self.run, dtype=int)
        if len(segment) != length or len(run) != length:
            raise DatasetError("segment and run labels must match the sample count")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "segment", segment)
        object.__setattr__(self, "run", run)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def phi(self) -> np.ndarray:
        return build_regressors(self.y, self.tau)

    def records(self) -> Iterator[RegressionRecord]:
        phi = self.phi
        for k in range(len(self)):
            yield RegressionRecord(k, self.y[k], phi[k])

    def pair_index(self) -> np.ndarray:
        """Indices k whose successor k + 1 belongs to the same run."""
        if len(self) < 2:
            return np.zeros(0, dtype=int)
        return np.flatnonzero(self.run[1:] == self.run[:-1])

    def targets(self) -> np.ndarray:
        idx = self.pair_index()
        return self.y[idx + 1] - self.y[idx]

    def runs(self) -> List[np.ndarray]:
        _, indices = split_batches(self.run, self.run)
        return indices

    def instruments(self, nominal: NominalModel, bound: float = DEFAULT_BOUND) -> np.ndarray:
        """Nominal instruments, one simulation per run from its first measured output."""
        z = np.empty((len(self), N_THETA, N_X))
        for idx in self.runs():
            first = BodyVelocity.from_array(self.y[idx[0]])
            z[idx] = generate_instruments(self.tau[idx], nominal, first, bound)
        return z

    def subset(self, mask) -> "RegressionDataset":
        return RegressionDataset(self.y[mask], self.tau[mask], self.segment[mask], self.run[mask])

    @classmethod
    def concatenate(cls, datasets: Sequence["RegressionDataset"], relabel: bool = True) -> "RegressionDataset":
        """Stack datasets; with ``relabel`` each input dataset becomes its own run."""
        if not datasets:
            raise DatasetError("nothing to concatenate")
        runs, segments = [], []
        run_offset = segment_offset = 0
        for data in datasets:
            runs.append(data.run + run_offset if relabel else data.run)
            segments.append(data.segment + segment_offset if relabel else data.segment)
            if relabel:
                run_offset = int(runs[-1].max()) + 1
                segment_offset = int(segments[-1].max()) + 1
        return cls(
            np.concatenate([d.y for d in datasets]),
            np.concatenate([d.tau for d in datasets]),
            np.concatenate(segments),
            np.concatenate(runs),
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "k": np.arange(len(self)),
            "y1": self.y[:, 0], "y2": self.y[:, 1], "y3": self.y[:, 2],
            "tau1": self.tau[:, 0], "tau2": self.tau[:, 1], "tau3": self.tau[:, 2],
            "segment": self.segment, "run": self.run,
        })

    @classmethod
    def from_frame(cls, frame) -> "RegressionDataset":
        columns = ["y1", "y2", "y3", "tau1", "tau2", "tau3"]
        missing = [name for name in columns if name not in frame.columns]
        if missing:
            raise DatasetError(f"dataset is missing column(s) {missing}")
        segment = frame["segment"].to_numpy() if "segment" in frame.columns else None
        run = frame["run"].to_numpy() if "run" in frame.columns else None
        return cls(
            frame[["y1", "y2", "y3"]].to_numpy(dtype=float),
            frame[["tau1", "tau2", "tau3"]].to_numpy(dtype=float),
            segment,
            run,
        )

    @classmethod
    def read_csv(cls, path) -> "RegressionDataset":
        try:
            frame = pd.read_csv(path)
        except FileNotFoundError:
            raise DatasetError(f"dataset file not found: {path}")
        logger.info("[DATASET] read %d samples from %s", len(frame), path)
        return cls.from_frame(frame)


def instrument_records(z: np.ndarray) -> List[InstrumentRecord]:
    return [InstrumentRecord(k, z[k]) for k in range(len(z))]


def worst_block(matrix: np.ndarray) -> str:
    """Block carrying most weight in the least-excited direction of ``matrix``."""
    _, _, vt = np.linalg.svd(matrix)
    direction = vt[-1] ** 2
    weights = [direction[lo:hi].sum() for _, lo, hi in BLOCKS]
    return BLOCKS[int(np.argmax(weights))][0]

