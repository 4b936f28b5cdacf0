import math

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from services.errors import NonFiniteInputError, SimulationDivergenceError
from services.vessel import (
    ActuatorGeometry,
    BodyVelocity,
    DisturbanceConfig,
    Pose,
    ThrusterCommand,
    VesselParams,
    integrate_pose,
    kinematics_step,
    simulate,
    step_dynamics,
    thruster_forces,
    wrap_angle,
)

speeds = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)
forces = st.floats(min_value=-5000.0, max_value=5000.0, allow_nan=False)


def test_equilibrium_stays_at_rest(params):
    assert step_dynamics(BodyVelocity(), (0.0, 0.0, 0.0), params) == BodyVelocity(0.0, 0.0, 0.0)


def test_surge_update_by_hand(params):
    nxt = step_dynamics(BodyVelocity(1.0, 0.0, 0.0), (0.0, 0.0, 0.0), params)
    assert nxt.u == pytest.approx(0.93)
    assert nxt.v == 0.0
    assert nxt.r == 0.0


def test_yaw_actuation_by_hand(params):
    nxt = step_dynamics(BodyVelocity(), (0.0, 0.0, 1.0), params)
    assert nxt.r == pytest.approx(3e-4)
    assert nxt.u == 0.0 and nxt.v == 0.0


def test_current_enters_as_relative_velocity(params):
    drifting = step_dynamics(BodyVelocity(0.2, 0.0, 0.0), (0.0, 0.0, 0.0), params, current=(0.2, 0.0))
    assert drifting.u == pytest.approx(0.2)


@given(speeds, speeds, speeds, forces, forces, forces)
def test_port_starboard_mirror(u, v, r, t1, t2, t3):
    params = VesselParams.reference()
    a = step_dynamics(BodyVelocity(u, v, r), (t1, t2, t3), params)
    b = step_dynamics(BodyVelocity(u, -v, -r), (t1, -t2, -t3), params)
    assert b.u == pytest.approx(a.u, abs=1e-12)
    assert b.v == pytest.approx(-a.v, abs=1e-12)
    assert b.r == pytest.approx(-a.r, abs=1e-12)


@given(speeds, speeds, speeds, forces, forces, forces)
def test_reversing_surge_negates_the_surge_update(u, v, r, t1, t2, t3):
    params = VesselParams.reference()
    a = step_dynamics(BodyVelocity(u, v, r), (t1, t2, t3), params)
    b = step_dynamics(BodyVelocity(-u, v, -r), (-t1, t2, -t3), params)
    assert b.u + u == pytest.approx(-(a.u - u), abs=1e-12)
    assert b.v == pytest.approx(a.v, abs=1e-12)
    assert b.r == pytest.approx(-a.r, abs=1e-12)


def test_non_finite_input_names_the_field(params):
    with pytest.raises(NonFiniteInputError) as info:
        step_dynamics(BodyVelocity(), (math.nan, 0.0, 0.0), params)
    assert info.value.field == "tau"


def test_zero_run_is_zero(params):
    run = simulate(BodyVelocity(), np.zeros((50, 3)), params)
    assert run.outputs.shape == (50, 3)
    assert not run.outputs.any()


def test_surge_step_settles_monotonically(params):
    tau1 = 3500.0
    run = simulate(BodyVelocity(), np.tile([tau1, 0.0, 0.0], (600, 1)), params)
    u = run.states[:, 0]
    assert np.all(np.diff(u) >= -1e-12)
    a, b, c = params.x_uu, params.x_u, params.x_tau * tau1
    root = (-b - math.sqrt(b * b - 4 * a * c)) / (2 * a)
    assert root > 0
    assert u[-1] == pytest.approx(root, rel=1e-6)


def test_same_seed_same_outputs(params):
    tau = np.tile([2000.0, 300.0, 100.0], (200, 1))
    disturbance = DisturbanceConfig(0.025, 0.025, seed=42)
    first = simulate(BodyVelocity(), tau, params, disturbance).outputs
    second = simulate(BodyVelocity(), tau, params, disturbance).outputs
    assert np.array_equal(first, second)


def test_measurement_noise_leaves_states_alone(params):
    tau = np.tile([2000.0, 0.0, 0.0], (100, 1))
    clean = simulate(BodyVelocity(), tau, params)
    noisy = simulate(BodyVelocity(), tau, params, DisturbanceConfig(0.0, 0.01, seed=3))
    assert np.array_equal(clean.states, noisy.states)
    assert not np.array_equal(clean.outputs, noisy.outputs)


def test_variance_flag_scales_noise():
    as_variance = DisturbanceConfig(0.0, 0.04, seed=1).sample(20000)
    as_std = DisturbanceConfig(0.0, 0.04, seed=1, variance=False).sample(20000)
    assert as_variance.e.std() == pytest.approx(0.2, rel=0.05)
    assert as_std.e.std() == pytest.approx(0.04, rel=0.05)


def test_constant_current_is_constant():
    sample = DisturbanceConfig(0.025, 0.0, seed=5, constant_current=True).sample(30)
    assert np.all(sample.u_c == sample.u_c[0])
    assert np.all(sample.v_c == sample.v_c[0])


def test_unstable_model_diverges():
    unstable = VesselParams(0.5, 0.0, 0.0, 1e-5, -0.1, 0.0, 1e-5, -0.3, 0.0, 3e-4)
    with pytest.raises(SimulationDivergenceError) as info:
        simulate(BodyVelocity(1.0, 0.0, 0.0), np.zeros((500, 3)), unstable, bound=1e3)
    assert info.value.step > 1


def test_thrusters_idle():
    assert np.array_equal(thruster_forces(ThrusterCommand(0.0, 0.0, 0.3, -0.2), ActuatorGeometry()), np.zeros(3))


def test_thruster_straight_ahead():
    geometry = ActuatorGeometry(lx1=1.0, ly1=0.0)
    assert thruster_forces(ThrusterCommand(1.0, 0.0, 0.0, 0.0), geometry) == pytest.approx([1.0, 0.0, 0.0])


def test_thruster_sideways_turns():
    geometry = ActuatorGeometry(lx1=1.0, ly1=0.0)
    tau = thruster_forces(ThrusterCommand(1.0, 0.0, math.pi / 2, 0.0), geometry)
    assert tau == pytest.approx([0.0, 1.0, 1.0], abs=1e-12)


@given(forces, forces, st.floats(-3.0, 3.0), st.floats(-3.0, 3.0), st.floats(0.1, 4.0))
def test_thrusters_scale_linearly(n1, n2, a1, a2, k):
    geometry = ActuatorGeometry()
    base = thruster_forces(ThrusterCommand(n1, n2, a1, a2), geometry)
    scaled = thruster_forces(ThrusterCommand(k * n1, k * n2, a1, a2), geometry)
    assert scaled == pytest.approx(k * base, abs=1e-6)


@given(st.floats(min_value=-100.0, max_value=100.0, allow_nan=False))
def test_wrap_angle_range(angle):
    wrapped = wrap_angle(angle)
    assert -math.pi < wrapped <= math.pi
    assert math.sin(wrapped) == pytest.approx(math.sin(angle), abs=1e-9)
    assert math.cos(wrapped) == pytest.approx(math.cos(angle), abs=1e-9)


def test_pose_unchanged_at_rest():
    pose = Pose(3.0, -1.0, 0.4)
    assert kinematics_step(pose, BodyVelocity(), 0.125).as_array() == pytest.approx(pose.as_array())


def test_pose_translation():
    assert kinematics_step(Pose(), BodyVelocity(1.0, 0.0, 0.0), 1.0) == Pose(1.0, 0.0, 0.0)


def test_pose_rotated_body_frame():
    pose = kinematics_step(Pose(0.0, 0.0, math.pi / 2), BodyVelocity(1.0, 0.0, 0.0), 1.0)
    assert pose.x == pytest.approx(0.0, abs=1e-12)
    assert pose.y == pytest.approx(1.0)
    assert pose.psi == pytest.approx(math.pi / 2)


def test_integrate_pose_includes_start():
    poses = integrate_pose(np.tile([1.0, 0.0, 0.0], (8, 1)), 0.125)
    assert poses.shape == (9, 3)
    assert poses[-1] == pytest.approx([1.0, 0.0, 0.0])


def test_trajectory_frame_columns(params):
    frame = simulate(BodyVelocity(), np.zeros((4, 3)), params).to_frame()
    assert list(frame.columns) == ["k", "u", "v", "r", "y1", "y2", "y3", "tau1", "tau2", "tau3"]
