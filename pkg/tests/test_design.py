import math

import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from services.design import (
    Allocation,
    InfoSummary,
    estimate_summaries,
    info_matrix,
    log_abs_det,
    objective,
    objective_gradient,
    optimize_allocation,
    primitive_summaries,
    project_simplex,
    realize_schedule,
)
from services.errors import DictionaryDeficiencyError
from services.regression import NominalModel


def _diagonal(q, values):
    size = len(values)
    zeros = np.zeros((size, 3))
    return InfoSummary(q, np.diag(values), np.diag(values), zeros, zeros, 100)


def _random_summaries(seed, count=4, length=200):
    rng = np.random.default_rng(seed)
    summaries = []
    for q in range(1, count + 1):
        phi = rng.normal(size=(length, 10, 3)) + rng.normal(size=(1, 10, 3))
        z = phi + 0.3 * rng.normal(size=phi.shape)
        summaries.append(estimate_summaries(q, phi, z))
    return summaries


@pytest.fixture(scope="module")
def ship_summaries(model_ship_library, model_ship_config):
    return primitive_summaries(
        model_ship_library, model_ship_config.vessel.params, NominalModel(model_ship_config.nominal)
    )


def test_zero_instruments_give_zero_summary():
    summary = estimate_summaries(1, np.ones((10, 10, 3)), np.zeros((10, 10, 3)))
    assert not summary.gamma_bar.any()
    assert not summary.z_bar.any()


def test_constant_data_summary():
    rng = np.random.default_rng(0)
    phi0, z0 = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    summary = estimate_summaries(1, np.tile(phi0, (7, 1, 1)), np.tile(z0, (7, 1, 1)))
    assert summary.x_bar == pytest.approx(phi0 @ z0.T)
    assert summary.y_bar == pytest.approx(phi0)
    assert summary.z_bar == pytest.approx(z0)


def test_summaries_are_reproducible(model_ship_library, model_ship_config, ship_summaries):
    again = primitive_summaries(
        model_ship_library, model_ship_config.vessel.params, NominalModel(model_ship_config.nominal)
    )
    for first, second in zip(ship_summaries, again):
        assert np.array_equal(first.gamma_bar, second.gamma_bar)
        assert np.array_equal(first.x_bar, second.x_bar)


def test_single_primitive_basic_mode():
    (summary,) = _random_summaries(1, count=1)
    assert info_matrix([300.0], [summary], "basic") == pytest.approx(300.0 * summary.gamma_bar)


def test_zero_mean_matches_basic_for_one_primitive():
    (summary,) = _random_summaries(2, count=1)
    assert info_matrix([300.0], [summary], "zero_mean") == pytest.approx(300.0 * summary.gamma_bar)


def test_opposite_instrument_means_cancel():
    first, second = _random_summaries(3, count=2)
    second = InfoSummary(2, second.gamma_bar, second.x_bar, second.y_bar, -first.z_bar, 200)
    matrix = info_matrix([50.0, 50.0], [first, second], "zero_mean")
    assert matrix == pytest.approx(50.0 * (first.x_bar + second.x_bar))


def test_allocation_carries_its_total():
    summaries = _random_summaries(4, count=3)
    allocation = Allocation(np.array([0.2, 0.3, 0.5]), 1000.0, 0.0)
    assert info_matrix(allocation, summaries) == pytest.approx(info_matrix([200.0, 300.0, 500.0], summaries))


@pytest.mark.parametrize("matrix, expected", [
    (np.eye(10), 0.0),
    (2.0 * np.eye(10), 10 * math.log(2.0)),
    (-np.eye(3), 0.0),
])
def test_log_abs_det(matrix, expected):
    assert log_abs_det(matrix) == pytest.approx(expected, abs=1e-12)


def test_log_abs_det_of_singular_matrix():
    assert log_abs_det(np.zeros((4, 4))) == -math.inf


@pytest.mark.parametrize("mode", ["basic", "zero_mean"])
def test_gradient_matches_central_differences(mode):
    summaries = _random_summaries(5)
    total = 1000.0
    rng = np.random.default_rng(6)
    for rho in rng.dirichlet(np.full(len(summaries), 2.0), size=10):
        grad = objective_gradient(rho, summaries, total, mode)
        h = 1e-6
        numeric = np.empty_like(grad)
        for q in range(len(rho)):
            up, down = rho.copy(), rho.copy()
            up[q] += h
            down[q] -= h
            numeric[q] = (objective(up, summaries, total, mode) - objective(down, summaries, total, mode)) / (2 * h)
        assert grad == pytest.approx(numeric, rel=1e-5)


@given(st.lists(st.floats(-5.0, 5.0), min_size=1, max_size=12))
def test_projection_lands_on_simplex(values):
    projected = project_simplex(np.array(values))
    assert np.all(projected >= 0.0)
    assert projected.sum() == pytest.approx(1.0)


@given(st.integers(1, 8), st.integers(0, 10_000))
def test_projection_keeps_simplex_points(size, seed):
    point = np.random.default_rng(seed).dirichlet(np.ones(size))
    assert project_simplex(point) == pytest.approx(point, abs=1e-12)


def test_single_primitive_takes_everything():
    allocation = optimize_allocation(_random_summaries(7, count=1), 500.0, "zero_mean")
    assert allocation.fractions.tolist() == [1.0]
    assert not allocation.singular


def test_symmetric_pair_splits_evenly():
    allocation = optimize_allocation([_diagonal(1, [1.0, 0.0]), _diagonal(2, [0.0, 1.0])], 2.0, "basic")
    assert allocation.fractions == pytest.approx([0.5, 0.5], abs=1e-4)


@pytest.mark.parametrize("seed", range(5))
def test_two_primitives_match_grid_search(seed):
    rng = np.random.default_rng(seed)
    first = _diagonal(1, rng.uniform(0.1, 2.0, size=4))
    second = _diagonal(2, rng.uniform(0.1, 2.0, size=4))
    grid = np.linspace(0.0, 1.0, 1001)
    values = [objective(np.array([r, 1.0 - r]), [first, second], 100.0, "basic") for r in grid]
    oracle = grid[int(np.argmax(values))]
    allocation = optimize_allocation([first, second], 100.0, "basic")
    assert allocation.fractions[0] == pytest.approx(oracle, abs=1e-2)


def test_unexcitable_dictionary():
    dead = InfoSummary(1, np.zeros((10, 10)), np.zeros((10, 10)), np.zeros((10, 3)), np.zeros((10, 3)), 300)
    with pytest.raises(DictionaryDeficiencyError):
        optimize_allocation([dead], 1000.0)
    with pytest.raises(DictionaryDeficiencyError):
        optimize_allocation([dead, dead], 1000.0)


@pytest.mark.parametrize("mode", ["basic", "zero_mean"])
def test_optimum_dominates_uniform_and_random_designs(ship_summaries, mode):
    total = 1000.0
    allocation = optimize_allocation(ship_summaries, total, mode)
    assert allocation.fractions.sum() == pytest.approx(1.0)
    assert np.all(allocation.fractions >= 0.0)
    uniform = np.full(len(ship_summaries), 1.0 / len(ship_summaries))
    assert allocation.objective_value >= objective(uniform, ship_summaries, total, mode) - 1e-9
    others = np.random.default_rng(99).dirichlet(np.ones(len(ship_summaries)), size=200)
    best_random = max(objective(rho, ship_summaries, total, mode) for rho in others)
    assert allocation.objective_value >= best_random - 1e-9


def test_optimizer_is_deterministic(ship_summaries):
    first = optimize_allocation(ship_summaries, 1000.0, starts=4, sanity_samples=20, seed=3)
    second = optimize_allocation(ship_summaries, 1000.0, starts=4, sanity_samples=20, seed=3)
    assert np.array_equal(first.fractions, second.fractions)


def test_percentage_report():
    allocation = Allocation(np.array([0.42, 0.58]), 1000.0, 1.0)
    lines = allocation.percentages(["tau6: Slow/steep zig-zag motion", "tau3: Slow/flat zig-zag motion"])
    assert lines == [
        "tau3 used for 58 % of the total experiment time",
        "tau6 used for 42 % of the total experiment time",
    ]


def test_schedule_single_primitive():
    schedule = realize_schedule(Allocation(np.array([1.0]), 300.0, 0.0), [100])
    assert schedule.repetitions == (3,)


def test_schedule_even_split():
    schedule = realize_schedule(Allocation(np.array([0.5, 0.5]), 400.0, 0.0), [100, 100])
    assert schedule.repetitions == (2, 2)


def test_schedule_half_and_sixths():
    allocation = Allocation(np.array([0.20, 0.49, 0.13, 0.18]), 600.0, 0.0)
    schedule = realize_schedule(allocation, [100, 100, 100, 100])
    assert schedule.repetitions == (1, 3, 1, 1)
    assert schedule.total_samples == 600


@settings(max_examples=100)
@given(
    st.integers(1, 6).flatmap(lambda q: st.tuples(
        st.lists(st.floats(0.0, 1.0), min_size=q, max_size=q).filter(lambda w: sum(w) > 1e-3),
        st.lists(st.integers(20, 200), min_size=q, max_size=q),
    )),
    st.integers(100, 5000),
)
def test_schedule_stays_within_one_segment(weights_and_lengths, total):
    weights, lengths = weights_and_lengths
    fractions = np.array(weights) / sum(weights)
    schedule = realize_schedule(Allocation(fractions, float(total), 0.0), lengths)
    assert all(n >= 0 for n in schedule.repetitions)
    assert abs(schedule.total_samples - total) <= max(lengths)


def test_schedule_needs_one_length_per_primitive():
    with pytest.raises(ValueError):
        realize_schedule(Allocation(np.array([0.5, 0.5]), 400.0, 0.0), [100])


def test_ship_optimum_favours_a_steep_zig_zag(ship_summaries):
    allocation = optimize_allocation(ship_summaries, 1000.0, "zero_mean")
    fractions = allocation.fractions
    assert np.count_nonzero(fractions) < len(ship_summaries)
    # q6..q8 are the steep zig-zags
    assert int(np.argmax(fractions)) + 1 in (6, 7, 8)


@pytest.mark.parametrize("mode", ["basic", "zero_mean"])
def test_optimum_does_not_depend_on_the_total(mode):
    summaries = _random_summaries(8)
    small = optimize_allocation(summaries, 1000.0, mode)
    large = optimize_allocation(summaries, 5000.0, mode)
    assert large.fractions == pytest.approx(small.fractions, abs=1e-4)
    assert large.objective_value - small.objective_value == pytest.approx(10 * math.log(5.0), abs=1e-4)


def test_scaled_information_keeps_the_basic_optimum():
    summaries = _random_summaries(9)
    scaled = [InfoSummary(s.q, 3.0 * s.gamma_bar, s.x_bar, s.y_bar, s.z_bar, s.n_samples_used) for s in summaries]
    plain = optimize_allocation(summaries, 1000.0, "basic")
    boosted = optimize_allocation(scaled, 1000.0, "basic")
    assert boosted.fractions == pytest.approx(plain.fractions, abs=1e-4)
    assert boosted.objective_value - plain.objective_value == pytest.approx(10 * math.log(3.0), abs=1e-4)


def test_shared_instrument_mean_reduces_to_basic():
    summaries = _random_summaries(10)
    z_common = summaries[0].z_bar
    shared = [
        InfoSummary(s.q, s.x_bar - s.y_bar @ z_common.T, s.x_bar, s.y_bar, z_common, s.n_samples_used)
        for s in summaries
    ]
    rho = np.random.default_rng(11).dirichlet(np.ones(len(shared)))
    assert objective(rho, shared, 1000.0, "zero_mean") == pytest.approx(objective(rho, shared, 1000.0, "basic"))
    basic = optimize_allocation(shared, 1000.0, "basic")
    zero_mean = optimize_allocation(shared, 1000.0, "zero_mean")
    assert int(np.argmax(zero_mean.fractions)) == int(np.argmax(basic.fractions))
    assert zero_mean.fractions == pytest.approx(basic.fractions, abs=1e-3)


@pytest.mark.parametrize("total", [1000, 2000, 5000])
def test_rounding_barely_moves_the_objective(ship_summaries, model_ship_library, model_ship_config, total):
    design = model_ship_config.design
    allocation = optimize_allocation(
        ship_summaries, float(total), "zero_mean",
        starts=design.starts, max_iter=design.max_iter, tol=design.tol,
        sanity_samples=design.sanity_samples, seed=design.seed,
    )
    lengths = [primitive.segment_length for primitive in model_ship_library]
    schedule = realize_schedule(allocation, lengths)
    realized = [entry.repetitions * entry.segment_length for entry in schedule.segments]
    rounded = log_abs_det(info_matrix(realized, ship_summaries, "zero_mean"))
    assert abs(rounded - allocation.objective_value) < 0.01 * abs(allocation.objective_value)
