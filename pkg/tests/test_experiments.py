import math
from dataclasses import replace

import numpy as np
import pytest

from services.design import optimize_allocation, primitive_summaries
from services.errors import ShipDesignError
from services.experiments import (
    CVResult,
    MonteCarloReport,
    cv_validate,
    design_signal,
    example_estimates,
    example_input,
    parameter_error,
    random_design_signal,
    run_monte_carlo,
    run_resampling_study,
    run_seeds,
    validation_signal,
    zero_mean_variance_study,
)
from services.regression import NominalModel
from services.vessel import DisturbanceConfig


@pytest.fixture(scope="module")
def chirp_input(model_ship_config):
    return validation_signal(model_ship_config.validation, model_ship_config.vessel.dt)


@pytest.fixture(scope="module")
def quick_config(model_ship_config):
    design = replace(model_ship_config.design, starts=2, sanity_samples=10)
    return replace(model_ship_config, design=design)


def test_parameter_error(params):
    theta0 = params.as_array()
    assert parameter_error(theta0, theta0) == 0.0
    assert parameter_error(2 * theta0, theta0) == pytest.approx(math.sqrt(10))


def test_validation_signal(model_ship_config, chirp_input):
    section = model_ship_config.validation
    assert chirp_input.shape == (section.length, 3)
    assert np.all(np.isfinite(chirp_input))
    assert abs(chirp_input[:, 0].mean() - section.tau1_mean) < section.tau1_amplitude
    assert np.max(np.abs(chirp_input[:, 2])) <= section.tau3_amplitude + 1e-9


def test_true_parameters_validate_perfectly(params, chirp_input):
    result = cv_validate(params.as_array(), params, chirp_input)
    assert not result.degenerate
    assert not result.rmse.any()
    assert result.norm == 0.0


def test_crude_model_has_positive_error(params, chirp_input, model_ship_config):
    result = cv_validate(model_ship_config.nominal, params, chirp_input)
    assert not result.degenerate
    assert result.norm > 0.0


def test_unstable_estimate_is_degenerate(params, chirp_input):
    theta = params.as_array().copy()
    theta[0] = 1.0
    theta[7] = 1.0
    result = cv_validate(theta, params, chirp_input)
    assert result.degenerate
    assert result.divergence_step is not None
    assert math.isnan(result.norm)
    assert result.to_dict()["norm"] is None


def test_non_finite_estimate_is_degenerate(params, chirp_input):
    theta = params.as_array().copy()
    theta[3] = math.nan
    result = cv_validate(theta, params, chirp_input)
    assert result.degenerate
    assert result.divergence_step == 0


def test_large_bounded_error_is_scored(params, chirp_input, model_ship_config):
    theta = params.as_array().copy()
    theta[9] *= 3.0
    result = cv_validate(theta, params, chirp_input)
    assert not result.degenerate
    assert math.isfinite(result.norm)
    assert result.norm > model_ship_config.montecarlo.cv_threshold


def test_unbounded_blow_up_is_degenerate(params, chirp_input):
    theta = params.as_array().copy()
    theta[0] = 1.0
    theta[7] = 1.0
    result = cv_validate(theta, params, chirp_input, bound=math.inf)
    assert result.degenerate
    assert math.isnan(result.norm)


def test_run_seeds_are_reproducible():
    first, second = run_seeds(1000, 20), run_seeds(1000, 20)
    assert np.array_equal(first, second)
    assert len(set(first.tolist())) == 20


def _report():
    cv = np.array([[0.01, 0.02, 0.03], [1.5, 0.5, 0.2], [math.nan] * 3])
    return MonteCarloReport("optimized", (1, 2, 3), np.array([1.0, 30.0, math.nan]), cv,
                            np.array([False, False, True]))


def test_degenerate_runs_count_as_failures():
    report = _report()
    assert report.fraction_below(5.0) == pytest.approx(1 / 3)
    assert report.fraction_below(0.15, "cv") == pytest.approx(1 / 3)
    summary = report.summary()
    assert summary["degenerate_runs"] == 1
    assert summary["median_param_error"] == pytest.approx(15.5)


def test_truncation_touches_only_the_plot():
    report = _report()
    raw = report.to_frame()
    plot = report.plot_frame()
    assert raw.loc[1, "param_error"] == 30.0
    assert plot.loc[1, "param_error"] == 25.0
    assert plot.loc[1, "cv_u"] == 1.0
    assert plot.loc[1, "cv_v"] == 0.25
    assert plot.loc[0, "cv_norm"] == raw.loc[0, "cv_norm"]
    assert list(raw.columns) == list(plot.columns)


def test_design_signal(model_ship_library):
    fractions = np.zeros(model_ship_library.Q)
    fractions[[0, 2]] = 0.5
    tau, labels, initial = design_signal(model_ship_library, fractions, 400)
    assert tau.shape == (400, 3)
    assert set(labels.tolist()) == {1, 3}
    assert initial == model_ship_library.get(1).initial


def test_empty_design_signal(model_ship_library):
    with pytest.raises(ShipDesignError):
        design_signal(model_ship_library, np.zeros(model_ship_library.Q), 400)


def test_random_design_signal(model_ship_library):
    tau, labels, _ = random_design_signal(model_ship_library, np.random.default_rng(0), 5, 200)
    assert tau.shape == (1000, 3)
    assert np.bincount(labels).tolist() == [200] * 5


def test_noise_free_monte_carlo_recovers_parameters(quick_config, model_ship_library):
    config = replace(quick_config, disturbance=DisturbanceConfig())
    reports = run_monte_carlo(config, model_ship_library, designs=("optimized", "uniform"), runs=1)
    for report in reports.values():
        assert report.runs == 1
        assert not report.degenerate.any()
        assert report.param_errors[0] < 1e-5
        assert report.cv_norms[0] < 1e-4


def test_unknown_design(quick_config, model_ship_library):
    with pytest.raises(ShipDesignError):
        run_monte_carlo(quick_config, model_ship_library, designs=("clever",), runs=1)


@pytest.mark.parametrize("runs", [100, pytest.param(500, marks=pytest.mark.slow)])
def test_optimized_design_beats_random_design(model_ship_config, model_ship_library, runs):
    settings = model_ship_config.montecarlo
    reports = run_monte_carlo(model_ship_config, model_ship_library, runs=runs)
    optimized, random = reports["optimized"], reports["random"]
    param_optimized = optimized.fraction_below(settings.param_threshold)
    param_random = random.fraction_below(settings.param_threshold)
    cv_optimized = optimized.fraction_below(settings.cv_threshold, "cv")
    cv_random = random.fraction_below(settings.cv_threshold, "cv")
    assert param_optimized >= 0.95
    assert param_optimized - param_random >= 0.20
    assert cv_optimized - cv_random >= 0.15


@pytest.mark.slow
def test_parameter_error_shrinks_with_experiment_length(model_ship_config, model_ship_library):
    config = model_ship_config
    summaries = primitive_summaries(
        model_ship_library, config.vessel.params, NominalModel(config.nominal),
        min_samples=config.design.min_samples, bound=config.vessel.bound,
    )
    allocation = optimize_allocation(
        summaries, config.design.total_n, config.design.mode,
        starts=config.design.starts, max_iter=config.design.max_iter, tol=config.design.tol,
        sanity_samples=config.design.sanity_samples, seed=config.design.seed,
    )
    medians = []
    for total_n in (250, 500, 1000, 2000):
        sized = replace(config, design=replace(config.design, total_n=total_n))
        report = run_monte_carlo(sized, model_ship_library, allocation=allocation, designs=("optimized",), runs=25)
        medians.append(report["optimized"].summary()["median_param_error"])
    assert all(later < earlier for earlier, later in zip(medians, medians[1:])), medians


def test_example_input_has_zero_mean():
    u, u_tilde = example_input(200, 5.0, np.random.default_rng(0))
    assert u.mean() == pytest.approx(0.0, abs=1e-12)
    assert u_tilde[:100] == pytest.approx(u_tilde[100:])
    assert u[:100].mean() == pytest.approx(5.0)


def test_example_input_needs_even_length():
    with pytest.raises(ValueError):
        example_input(7, 1.0, np.random.default_rng(0))


def test_example_estimates_without_noise():
    u, _ = example_input(50, 3.0, np.random.default_rng(1))
    complete, batchwise = example_estimates(2.5 * u, u)
    assert complete == pytest.approx(2.5)
    assert batchwise == pytest.approx(2.5)


def test_complete_demeaning_has_lower_variance():
    result = zero_mean_variance_study(seeds=300, n=200, seed=4)
    assert result["mean_complete"] == pytest.approx(1.0, abs=0.05)
    assert result["var_complete"] < result["var_batchwise"]


@pytest.mark.slow
def test_resampling_study(quick_config, model_ship_library):
    reports = run_resampling_study(quick_config, model_ship_library, pick=6, resamples=5)
    assert set(reports) == {"optimized", "random"}
    for report in reports.values():
        assert report.runs == 5
        assert report.notes["sub_experiments"] == model_ship_library.Q * quick_config.montecarlo.parts_per_primitive
    assert len(reports["optimized"].notes["composition"]) == model_ship_library.Q


def test_cv_result_document():
    document = CVResult(np.array([0.1, 0.2, 0.3])).to_dict()
    assert document["rmse"] == {"u": 0.1, "v": 0.2, "r": 0.3}
    assert document["degenerate"] is False
