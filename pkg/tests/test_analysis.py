import numpy as np
import pytest

from hzdwalk import analysis as an
from hzdwalk.dynamics import ExternalForce
from hzdwalk.train import RolloutLog
from hzdwalk import _rollout_kernel as rk


def make_sample(i, x):
    x = np.asarray(x, float)
    return an.PoincareSample(step_index=i, q=x[:5], dq=x[5:])


def test_residuals_zero_for_periodic_orbit(rng):
    x = rng.standard_normal(10)
    samples = [make_sample(i, x) for i in range(5)]
    assert np.array_equal(an.poincare_residuals(samples), np.zeros(4))


def test_residuals_period_two_alternate(rng):
    a, b = rng.standard_normal(10), rng.standard_normal(10)
    d = np.linalg.norm(a - b)
    samples = [make_sample(i, a if i % 2 == 0 else b) for i in range(6)]
    assert np.allclose(an.poincare_residuals(samples), d)


def test_residuals_geometric_ratio(rng):
    x_star = rng.standard_normal(10)
    c = rng.standard_normal(10)
    rho = 0.6
    samples = [make_sample(k, x_star + c * rho ** k) for k in range(10)]
    resid = an.poincare_residuals(samples)
    ratios = resid[1:] / resid[:-1]
    assert np.allclose(ratios, rho, atol=1e-10)


def test_residuals_need_two_samples(rng):
    with pytest.raises(ValueError):
        an.poincare_residuals([make_sample(0, rng.standard_normal(10))])


def test_contraction_recovers_linear_map(rng):
    A = 0.5 * rng.standard_normal((10, 10)) / np.sqrt(10)
    rho_true = np.max(np.abs(np.linalg.eigvals(A)))
    est = an.return_map_contraction(lambda x: A @ x, np.zeros(10))
    assert est.spectral_radius == pytest.approx(rho_true, abs=1e-6)
    assert est.invalid_columns == ()


def test_contraction_reports_invalid_columns(rng):
    A = np.eye(10) * 0.3

    def stride(x):
        if abs(x[4]) > 1e-7:
            return None
        return A @ x

    est = an.return_map_contraction(stride, np.zeros(10), delta=1e-5)
    assert est.invalid_columns == (4,)
    assert est.spectral_radius == pytest.approx(0.3, abs=1e-6)


def test_contraction_estimate_stable_under_delta_halving(rng):
    A = 0.4 * np.eye(10) + 0.01 * rng.standard_normal((10, 10))

    def stride(x):
        return A @ x + 0.05 * x * np.sum(x)

    x0 = 0.01 * rng.standard_normal(10)
    e1 = an.return_map_contraction(stride, x0, delta=1e-4).spectral_radius
    e2 = an.return_map_contraction(stride, x0, delta=5e-5).spectral_radius
    assert abs(e1 - e2) < 1e-4


def test_tracking_perfect_follower():
    t = np.arange(0.0, 10.0, 0.01)
    v = np.where(t < 5.0, 1.0, 1.4)
    rep = an.tracking_report(t, v, [(0.0, 1.0), (5.0, 1.4)], t_end=10.0)
    assert rep.max_abs_error == pytest.approx(0.0, abs=1e-12)
    assert len(rep.segments) == 2
    assert rep.segments[1].settling_time == pytest.approx(0.01, abs=0.011)


def test_tracking_first_order_lag_settling_time():
    """A first-order lag settles into the 2% band at t = tau * ln(50)."""
    tau = 0.5
    dt = 0.001
    t = np.arange(0.0, 12.0, dt)
    v = np.where(t < 6.0, 1.0, 1.4 - 0.4 * np.exp(-(t - 6.0) / tau))
    rep = an.tracking_report(t, v, [(0.0, 1.0), (6.0, 1.4)], t_end=12.0)
    analytic = tau * np.log(50.0)
    assert rep.segments[1].settling_time == pytest.approx(analytic, abs=0.01)


def test_tracking_mean_excludes_transient():
    t = np.arange(0.0, 4.0, 0.01)
    v = np.where(t < 1.0, 0.0, 2.0)  # garbage during the first second
    rep = an.tracking_report(t, v, [(0.0, 2.0)], t_end=4.0, transient=1.0)
    assert rep.segments[0].v_mean == pytest.approx(2.0)


def test_push_schedule_windows():
    sched = an.make_push_schedule(40.0, "backward")
    assert sched.magnitude_class == "small"
    assert all(f.fx == -40.0 for f in sched.forces)
    assert [f.t_on for f in sched.forces] == [2.0, 4.0, 6.0]
    with pytest.raises(ValueError):
        an.DisturbanceSchedule(forces=(
            ExternalForce(10.0, 1.0, 2.0), ExternalForce(10.0, 1.5, 2.5)))
    with pytest.raises(ValueError):
        an.DisturbanceSchedule(forces=(), direction="sideways")


def empty_log():
    return RolloutLog(np.zeros((0, rk.LOG_COLS)))


def one_row_log(rng):
    data = rng.standard_normal((1, rk.LOG_COLS))
    return RolloutLog(data)


def test_export_empty_log_header_only(tmp_path):
    path = tmp_path / "traj.csv"
    an.export_trajectory_csv(empty_log(), path)
    lines = path.read_text().splitlines()
    assert lines == [",".join(an.TRAJECTORY_COLUMNS)]


def test_export_one_row_round_trip(tmp_path, rng):
    log = one_row_log(rng)
    path = tmp_path / "traj.csv"
    an.export_trajectory_csv(log, path)
    back = an.read_trajectory_csv(path)
    assert back.shape == (1, len(an.TRAJECTORY_COLUMNS))
    assert np.array_equal(back[0, 1:6], log.q[0])


def test_export_full_episode_round_trip_bit_exact(tmp_path, rng):
    data = rng.standard_normal((300, rk.LOG_COLS))
    log = RolloutLog(data)
    path = tmp_path / "traj.csv"
    an.export_trajectory_csv(log, path)
    back = an.read_trajectory_csv(path)
    assert back.shape[0] == 300
    assert np.array_equal(back, data[:, an._TRAJ_SRC_COLS])


def test_phase_plane_columns(tmp_path, rng):
    data = rng.standard_normal((10, rk.LOG_COLS))
    path = tmp_path / "pp.csv"
    an.export_phase_plane_csv(RolloutLog(data), path)
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert rows.shape == (10, 10)
    assert np.array_equal(rows[:, 0], data[:, rk.COL_Q])
    assert np.array_equal(rows[:, 1], data[:, rk.COL_DQ])


def test_stick_frames_written(tmp_path, rng, robot):
    data = np.zeros((100, rk.LOG_COLS))
    data[:, rk.COL_Q + 2] = 0.3  # bent stance knee
    data[:, rk.COL_Q + 4] = 0.3
    data[:, rk.COL_SFX] = np.linspace(0.0, 1.0, 100)
    paths = an.export_stick_frames(RolloutLog(data), robot, tmp_path / "fr",
                                   every=20)
    assert len(paths) == 5
    assert paths[0].endswith("frame_000000.svg")
    body = open(paths[0]).read()
    assert body.startswith("<svg") and "polyline" in body
