import numpy as np
import pytest

from hzdwalk.gait import (JointBounds, PhaseConfig, bezier_derivative,
                          bezier_eval, desired_outputs, expand_free_params,
                          extract_free_params, load_gait_json, phase,
                          save_gait_json, virtual_constraint_error)


def de_casteljau(ctrl, tau):
    """Independent Bezier oracle by repeated linear interpolation."""
    pts = np.array(ctrl, float)
    while len(pts) > 1:
        pts = (1 - tau) * pts[:-1] + tau * pts[1:]
    return pts[0]


def test_bezier_endpoints_exact(rng):
    alpha = rng.uniform(-1.0, 1.0, (4, 6))
    assert np.array_equal(bezier_eval(alpha, 0.0), alpha[:, 0])
    assert np.array_equal(bezier_eval(alpha, 1.0), alpha[:, 5])


def test_bezier_matches_de_casteljau(rng):
    for _ in range(500):
        alpha = rng.uniform(-2.0, 2.0, (4, 6))
        tau = rng.uniform(0.0, 1.0)
        ours = bezier_eval(alpha, tau)
        oracle = np.array([de_casteljau(alpha[i], tau) for i in range(4)])
        assert np.allclose(ours, oracle, atol=1e-12)


def test_bezier_partition_of_unity(rng):
    ones = np.ones((4, 6))
    for tau in rng.uniform(0.0, 1.0, 100):
        assert np.allclose(bezier_eval(ones, tau), 1.0, atol=1e-12)


def test_bezier_derivative_matches_finite_differences(rng):
    alpha = rng.uniform(-1.0, 1.0, (4, 6))
    h = 1e-7
    for tau in (0.2, 0.5, 0.9):
        fd = (bezier_eval(alpha, tau + h) - bezier_eval(alpha, tau - h)) / (2 * h)
        assert np.allclose(bezier_derivative(alpha, tau), fd, atol=1e-5)


def test_expand_free_params_transition_constraints(rng):
    """Coefficient columns must satisfy the step-transition identities."""
    bounds = JointBounds()
    lo, hi = bounds.free_bounds()
    for _ in range(500):
        free = rng.uniform(lo, hi)
        alpha = expand_free_params(free, bounds)
        # final column equals the swapped-leg first column
        assert np.array_equal(alpha[:, 5], alpha[[2, 3, 0, 1], 0])
        bounds.check_alpha(alpha)
        assert np.array_equal(extract_free_params(alpha), free)


def test_expand_free_params_validates_input():
    with pytest.raises(ValueError):
        expand_free_params(np.zeros(19))
    bounds = JointBounds()
    bad = np.full(20, 5.0)
    with pytest.raises(ValueError):
        expand_free_params(bad, bounds)


def test_phase_variable_clamped(robot):
    cfg = PhaseConfig()
    q = np.zeros(5)  # upright: hip x = 0, mid-stride
    assert phase(q, cfg, robot) == pytest.approx(0.5)


def test_desired_outputs_hold_outside_phase_interval(robot, rng):
    alpha = rng.uniform(0.1, 0.4, (4, 6))
    cfg = PhaseConfig()
    # hip far behind the start of the step: tau clamps to 0, rate to 0
    q = np.array([0.5, 0.1, 0.3, -0.1, 0.3])
    dq = rng.standard_normal(5)
    des = desired_outputs(q, dq, alpha, cfg, robot)
    assert np.array_equal(des.q_d, alpha[:, 0])
    assert np.array_equal(des.dq_d, np.zeros(4))


def test_virtual_constraint_error_zero_on_constraint(robot):
    alpha = np.full((4, 6), 0.3)
    cfg = PhaseConfig()
    q = np.array([0.0, 0.3, 0.3, 0.3, 0.3])
    e, de = virtual_constraint_error(q, np.zeros(5), alpha, cfg, robot)
    assert np.allclose(e, 0.0, atol=1e-12)
    assert np.allclose(de, 0.0, atol=1e-12)


def test_gait_json_round_trip(tmp_path, rng):
    alpha = rng.uniform(-0.5, 0.5, (4, 6))
    path = tmp_path / "gait.json"
    save_gait_json(alpha, 12.5, path)
    back, kd = load_gait_json(path)
    assert np.array_equal(back, alpha)
    assert kd == 12.5
    import json
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"alpha": np.zeros((3, 6)).tolist(), "kd": 1.0}))
    with pytest.raises(ValueError):
        load_gait_json(bad)
