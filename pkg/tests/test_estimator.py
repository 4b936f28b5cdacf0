import numpy as np
import pytest

from services.errors import DatasetError, NonInformativeDataError
from services.estimator import iv_estimate, iv_solve, ls_estimate, nominal_iv_estimate
from services.experiments import example_estimates, example_input
from services.regression import NominalModel, RegressionDataset
from services.vessel import DisturbanceConfig, simulate


def _dataset(library, params, qs, disturbance=None):
    runs = []
    for q in qs:
        primitive = library.get(q)
        run = simulate(primitive.initial, primitive.input_signal, params, disturbance)
        runs.append(RegressionDataset(run.outputs, run.tau))
    return RegressionDataset.concatenate(runs)


def test_noise_free_least_squares_recovers_truth(model_ship_library, params):
    data = _dataset(model_ship_library, params, [2, 6, 9])
    estimate = ls_estimate(data)
    assert estimate.theta_hat == pytest.approx(params.as_array(), rel=1e-8)


def test_noise_free_iv_recovers_truth(model_ship_library, params, model_ship_config):
    data = _dataset(model_ship_library, params, [2, 6, 9])
    estimate = nominal_iv_estimate(data, NominalModel(model_ship_config.nominal), "complete")
    assert estimate.theta_hat == pytest.approx(params.as_array(), rel=1e-6)
    assert estimate.n_samples == len(data) - 3
    assert estimate.residual_norm < 1e-12


@pytest.mark.parametrize("q", [9, 10, 11])
def test_single_spiral_is_enough(model_ship_library, params, model_ship_config, q):
    data = _dataset(model_ship_library, params, [q])
    estimate = nominal_iv_estimate(data, NominalModel(model_ship_config.nominal), "complete")
    assert estimate.theta_hat == pytest.approx(params.as_array(), rel=1e-6)


def test_scalar_example_is_exact_without_noise():
    u, _ = example_input(40, 3.0, np.random.default_rng(0))
    complete, batchwise = example_estimates(2.5 * u, u)
    assert complete == pytest.approx(2.5)
    assert batchwise == pytest.approx(2.5)


def test_least_squares_is_biased_by_output_noise(model_ship_library, params):
    noisy = DisturbanceConfig(0.0, 0.025, seed=11)
    data = _dataset(model_ship_library, params, list(range(1, 12)) * 3, noisy)
    estimate = ls_estimate(data)
    relative = np.abs(estimate.theta_hat - params.as_array()) / np.abs(params.as_array())
    assert relative.max() > 0.1


def test_iv_beats_least_squares_on_noisy_data(model_ship_library, params, model_ship_config):
    noisy = DisturbanceConfig(0.025, 0.025, seed=5)
    data = _dataset(model_ship_library, params, list(range(1, 12)) * 3, noisy)
    truth = params.as_array()
    iv = nominal_iv_estimate(data, NominalModel(model_ship_config.nominal), "complete")
    ls = ls_estimate(data)
    iv_error = np.linalg.norm((iv.theta_hat - truth) / truth)
    ls_error = np.linalg.norm((ls.theta_hat - truth) / truth)
    assert iv_error < ls_error


def test_single_sample_is_not_informative():
    data = RegressionDataset([[0.1, 0.0, 0.0], [0.2, 0.0, 0.0]], [[100.0, 0.0, 0.0]] * 2)
    with pytest.raises(NonInformativeDataError) as info:
        ls_estimate(data)
    assert info.value.rank < 10


def test_straight_runs_only_excite_surge(model_ship_library, params):
    data = _dataset(model_ship_library, params, [1, 2])
    with pytest.raises(NonInformativeDataError) as info:
        ls_estimate(data)
    assert info.value.rank == 3


def test_instrument_length_must_match(model_ship_library, params):
    data = _dataset(model_ship_library, params, [6])
    with pytest.raises(DatasetError):
        iv_estimate(data, data.phi[:-1])


def test_solver_shape_checks():
    with pytest.raises(DatasetError):
        iv_solve(np.zeros((4, 10, 3)), np.zeros((5, 10, 3)), np.zeros((4, 3)))


def test_estimate_document(model_ship_library, params):
    estimate = ls_estimate(_dataset(model_ship_library, params, [9]))
    document = estimate.to_dict()
    assert set(document) == {"theta_hat", "condition_number", "residual_norm", "N"}
    assert document["N"] == 299
    assert document["condition_number"] >= 1.0
