"""Instrumental-variable and least-squares parameter estimation."""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from services.errors import DatasetError, NonInformativeDataError
from services.regression import NominalModel, RegressionDataset, demean, worst_block
from services.vessel import N_THETA, VesselParams

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class ThetaEstimate:
    theta_hat: np.ndarray
    condition_number: float
    residual_norm: float
    n_samples: int

    @property
    def params(self) -> VesselParams:
        return VesselParams.from_array(self.theta_hat)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theta_hat": [float(value) for value in self.theta_hat],
            "condition_number": float(self.condition_number),
            "residual_norm": float(self.residual_norm),
            "N": int(self.n_samples),
        }


def iv_solve(phi: np.ndarray, z: np.ndarray, target: np.ndarray) -> ThetaEstimate:
    """Solve (1/N) sum Z Phi^T theta = (1/N) sum Z y in the least-squares sense.

    ``phi`` and ``z`` are (N, 10, 3), ``target`` is (N, 3). Columns of the
    normal matrix are scaled to unit norm before an SVD solve and the
    solution is unscaled afterwards.
    """
    phi = np.asarray(phi, dtype=float)
    z = np.asarray(z, dtype=float)
    target = np.asarray(target, dtype=float)
    if phi.shape != z.shape:
        raise DatasetError(f"regressors {phi.shape} and instruments {z.shape} differ in shape")
    if len(phi) != len(target):
        raise DatasetError(f"{len(phi)} regressor samples but {len(target)} targets")
    n = len(phi)
    if n == 0:
        raise NonInformativeDataError(0, N_THETA, "surge")

    a = np.einsum("kia,kja->ij", z, phi) / n
    b = np.einsum("kia,ka->i", z, target) / n

    norms = np.linalg.norm(a, axis=0)
    safe = np.where(norms > 0.0, norms, 1.0)
    scaled = a / safe
    singular = np.linalg.svd(scaled, compute_uv=False)
    rank = int(np.sum(singular > RANK_TOLERANCE * singular[0])) if singular[0] > 0 else 0
    if rank < N_THETA:
        block = worst_block(scaled)
        logger.warning("[ESTIMATOR] rank %d of %d, weakest block %s", rank, N_THETA, block)
        raise NonInformativeDataError(rank, N_THETA, block)

    solution, *_ = np.linalg.lstsq(scaled, b, rcond=None)
    theta = solution / safe
    residual = b - a @ theta
    return ThetaEstimate(
        theta_hat=theta,
        condition_number=float(singular[0] / singular[-1]),
        residual_norm=float(residual @ residual),
        n_samples=n,
    )


def iv_estimate(
    dataset: RegressionDataset,
    instruments: np.ndarray,
    scheme: str = "complete",
) -> ThetaEstimate:
    """IV estimate from a dataset and per-sample instruments.

    ``scheme`` picks how the instrument mean is removed over the samples that
    enter the estimate: ``complete``, ``batchwise`` (per segment) or ``none``.
    """
    instruments = np.asarray(instruments, dtype=float)
    if len(instruments) != len(dataset):
        raise DatasetError(f"{len(instruments)} instrument samples for {len(dataset)} data samples")
    idx = dataset.pair_index()
    phi = dataset.phi[idx]
    z = demean(instruments[idx], dataset.segment[idx], scheme) if len(idx) else instruments[idx]
    return iv_solve(phi, z, dataset.targets())


def ls_estimate(dataset: RegressionDataset) -> ThetaEstimate:
    idx = dataset.pair_index()
    phi = dataset.phi[idx]
    return iv_solve(phi, phi, dataset.targets())


def nominal_iv_estimate(
    dataset: RegressionDataset,
    nominal: NominalModel,
    scheme: str = "complete",
    bound: Optional[float] = None,
) -> ThetaEstimate:
    """Generate nominal instruments for every run of ``dataset`` and estimate."""
    z = dataset.instruments(nominal) if bound is None else dataset.instruments(nominal, bound)
    estimate = iv_estimate(dataset, z, scheme)
    logger.debug("[ESTIMATOR] N=%d cond=%.3g", estimate.n_samples, estimate.condition_number)
    return estimate
