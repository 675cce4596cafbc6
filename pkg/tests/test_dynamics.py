import numpy as np
import pytest

from hzdwalk.dynamics import (Dynamics, ExternalForce, HybridState,
                              IntegratorConfig, force_at)
from hzdwalk.model import point_jacobian

from conftest import random_configuration


@pytest.fixture(scope="module")
def dyn():
    from hzdwalk.model import RobotParams
    return Dynamics(RobotParams.default())


def test_mass_matrix_symmetric_positive_definite(dyn, rng):
    for _ in range(200):
        q = random_configuration(rng)
        D = dyn.mass_matrix(q)
        assert np.allclose(D, D.T, atol=1e-12)
        assert np.linalg.eigvalsh(D).min() > 0.0


def test_kinetic_energy_matches_jacobian_sum(dyn, rng):
    """KE must equal sum over links of point-mass plus rotational parts."""
    tab = dyn.tables
    q = random_configuration(rng)
    dq = rng.standard_normal(5)
    ke = 0.0
    from hzdwalk.model import SEG_ANGLE_ROWS
    for s in range(5):
        J = point_jacobian(tab.com[s], q)
        v = J @ dq
        w = SEG_ANGLE_ROWS[s] @ dq
        ke += 0.5 * tab.masses[s] * v @ v + 0.5 * tab.inertias[s] * w * w
    assert dyn.kinetic_energy(q, dq) == pytest.approx(ke, rel=1e-12)


def test_gravity_vector_matches_potential_gradient(dyn, rng):
    q = random_configuration(rng)
    G = dyn.gravity_vector(q)
    h = 1e-6
    for j in range(5):
        qp, qm = q.copy(), q.copy()
        qp[j] += h
        qm[j] -= h
        fd = (dyn.potential_energy(qp) - dyn.potential_energy(qm)) / (2 * h)
        assert G[j] == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_passive_energy_conservation(dyn):
    """Unactuated swing from a gentle posture drifts < 1e-6 relative over 1 s."""
    q = np.array([0.0, 0.0, 0.1, 0.0, 0.1])
    dq = np.zeros(5)
    e0 = dyn.total_energy(q, dq)
    u = np.zeros(4)
    for _ in range(500):
        q, dq = dyn._rk4(q, dq, u, 0.0, 0.002)
    drift = abs(dyn.total_energy(q, dq) - e0) / abs(e0)
    assert drift < 1e-6


def test_rk4_fourth_order_convergence(dyn):
    q0 = np.array([0.05, 0.1, 0.3, -0.1, 0.3])
    dq0 = np.array([0.1, -0.05, 0.05, 0.1, -0.05])
    u = np.zeros(4)

    def advance(dt, n):
        q, dq = q0.copy(), dq0.copy()
        for _ in range(n):
            q, dq = dyn._rk4(q, dq, u, 0.0, dt)
        return np.concatenate([q, dq])

    ref = advance(0.4 / 512, 512)
    errs = [np.linalg.norm(advance(0.4 / n, n) - ref) for n in (8, 16, 32)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 3.7


def test_external_force_window():
    f = ExternalForce(fx=30.0, t_on=1.0, t_off=1.5)
    assert f.value_at(0.9) == 0.0
    assert f.value_at(1.2) == 30.0
    assert f.value_at(1.5) == 0.0
    assert force_at([f, ExternalForce(-10.0, 2.0, 2.1)], 2.05) == -10.0
    with pytest.raises(ValueError):
        ExternalForce(fx=1.0, t_on=2.0, t_off=1.0)


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt=-0.001)


def test_integrate_detects_swing_foot_touchdown(dyn):
    """Falling forward from a stride posture must trigger the guard with the
    swing foot in front and moving down."""
    q = np.array([0.15, -0.4, 0.12, 0.4, 0.15])
    dq = np.array([0.8, 0.3, 0.0, 0.4, 0.0])
    state = HybridState(q=q, dq=dq)
    cfg = IntegratorConfig()

    def controller(state, t):
        return np.zeros(4)

    hit = False
    for _ in range(500):
        state, hit = dyn.integrate(state, controller, [], cfg)
        if hit:
            break
    assert hit
    x, y, vy = dyn.swing_foot_geom(state.q, state.dq)
    assert abs(y) < 1e-6
    assert x > 0.0
    assert vy < 0.0
