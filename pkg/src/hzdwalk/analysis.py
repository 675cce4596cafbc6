"""Evaluation suite: speed-tracking reports, Poincare / limit-cycle
diagnostics, scheduled-push disturbance trials, and artifact export
(trajectory CSV, phase-plane CSV, stick-figure SVG frames).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import _rollout_kernel as rk
from .dynamics import ExternalForce, HybridState, ImpactError, SimulationError
from .model import (SEG_ANGLE_ROWS, SEG_COS_SIGN, forward_kinematics)
from .gait import expand_free_params
from .policy import Observation
from .train import (EpisodeConfig, HIP_HEIGHT_RANGE, RolloutLog,
                    TORSO_LIMIT, WalkingEnv, rollout)
from .dynamics import DIVERGENCE_LIMIT

__all__ = [
    "PoincareSample", "poincare_sections", "poincare_residuals",
    "make_stride_map", "return_map_contraction", "ContractionEstimate",
    "TrackingSegment", "TrackingReport", "tracking_report",
    "run_tracking_eval", "DisturbanceSchedule", "make_push_schedule",
    "PushTrialResult", "run_push_trial", "push_sweep",
    "TRAJECTORY_COLUMNS", "export_trajectory_csv", "read_trajectory_csv",
    "export_phase_plane_csv", "export_stick_frames",
]


# ---------------------------------------------------------------------------
# Poincare section diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoincareSample:
    """Post-impact state at the step-transition section."""

    step_index: int
    q: np.ndarray
    dq: np.ndarray

    def state(self) -> np.ndarray:
        """The 10-dimensional section coordinate (q, dq)."""
        return np.concatenate([self.q, self.dq])


def poincare_sections(log: RolloutLog) -> list[PoincareSample]:
    """Extract the post-impact samples recorded in a rollout log."""
    samples = []
    mask = log.event_flag > 0.5
    for i in np.flatnonzero(mask):
        samples.append(PoincareSample(
            step_index=int(log.step_index[i]),
            q=log.q[i].copy(), dq=log.dq[i].copy()))
    return samples


def poincare_residuals(samples) -> np.ndarray:
    """Euclidean distances between consecutive section states.

    A sequence trending to zero indicates convergence to a limit cycle.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least 2 section samples")
    X = np.stack([s.state() for s in samples])
    return np.linalg.norm(np.diff(X, axis=0), axis=1)


# ---------------------------------------------------------------------------
# Return-map contraction estimate
# ---------------------------------------------------------------------------

def make_stride_map(env: WalkingEnv, alpha: np.ndarray, kd: float,
                    max_steps: int = 2000):
    """Build the stride-to-stride return map under a fixed gait.

    The returned callable maps a 10-dimensional post-impact state to the
    post-impact state one step later, or ``None`` when the stride fails
    (fall, divergence, no impact within ``max_steps``, or an infeasible
    impact).
    """
    tab = env.tables
    dyn = env.dynamics
    geom = (SEG_ANGLE_ROWS, SEG_COS_SIGN, tab.com, tab.masses, tab.inertias,
            tab.gravity, tab.swing_foot, tab.hip)
    empty = np.zeros(0)

    def stride(x: np.ndarray):
        q = np.asarray(x[:5], float).copy()
        dq = np.asarray(x[5:10], float).copy()
        log = np.zeros((max_steps, rk.LOG_COLS))
        u_ev = np.zeros(4)
        win = np.zeros(1)
        code, n, t, _, _, _, _ = rk.walk_chunk(
            *geom, q, dq, 0.0, alpha, env.phase.p_begin, env.phase.p_end,
            env.kp, kd, env.torque_limit,
            empty, empty, empty,
            win, 0, 1, 1.0, 1.0, 1.0, 0.0,
            max_steps, env.integrator.dt, env.integrator.event_bisection_tol,
            DIVERGENCE_LIMIT, TORSO_LIMIT,
            HIP_HEIGHT_RANGE[0], HIP_HEIGHT_RANGE[1],
            log, 0, 0, u_ev)
        if code != rk.CHUNK_IMPACT:
            return None
        try:
            post = dyn.impact_map(HybridState(q, dq, t, 0, 0.0))
        except ImpactError:
            return None
        return np.concatenate([post.q, post.dq])

    return stride


@dataclass(frozen=True)
class ContractionEstimate:
    """Finite-difference spectral radius of the return map at a fixed point."""

    spectral_radius: float
    eigenvalues: np.ndarray
    invalid_columns: tuple[int, ...]
    delta: float


def return_map_contraction(stride_map, x0: np.ndarray,
                           delta: float = 1e-5) -> ContractionEstimate:
    """Estimate the local contraction rate of a stride-to-stride map.

    Central differences perturb each section coordinate by ``±delta``;
    columns whose perturbed stride fails are excluded from the Jacobian and
    reported in ``invalid_columns``.
    """
    x0 = np.asarray(x0, float)
    n = x0.size
    J = np.zeros((n, n))
    invalid = []
    for j in range(n):
        ej = np.zeros(n)
        ej[j] = delta
        fp = stride_map(x0 + ej)
        fm = stride_map(x0 - ej)
        if fp is None or fm is None:
            invalid.append(j)
            continue
        J[:, j] = (np.asarray(fp) - np.asarray(fm)) / (2.0 * delta)
    keep = [j for j in range(n) if j not in invalid]
    eig = np.linalg.eigvals(J[np.ix_(keep, keep)]) if keep else np.zeros(0)
    rho = float(np.max(np.abs(eig))) if eig.size else float("nan")
    return ContractionEstimate(spectral_radius=rho, eigenvalues=eig,
                               invalid_columns=tuple(invalid), delta=delta)


# ---------------------------------------------------------------------------
# Speed tracking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrackingSegment:
    """One constant-command segment of a speed profile."""

    t_start: float
    t_end: float
    v_command: float
    v_mean: float
    abs_error: float
    settling_time: float  # NaN when the 2% band is never held


@dataclass(frozen=True)
class TrackingReport:
    """Per-segment speed-tracking summary for one episode."""

    segments: tuple[TrackingSegment, ...]

    @property
    def max_abs_error(self) -> float:
        return max(s.abs_error for s in self.segments)

    def to_dict(self) -> dict:
        return {"segments": [vars(s) for s in self.segments],
                "max_abs_error": self.max_abs_error}


def _settling_time(t, v, v_cmd, step_size):
    """First time after which |v - command| stays within 2% of the step."""
    band = 0.02 * abs(step_size)
    if band == 0.0:
        band = 0.02 * abs(v_cmd)
    inside = np.abs(v - v_cmd) <= band
    if not inside[-1]:
        return float("nan")
    # last index where the trace is outside the band
    out = np.flatnonzero(~inside)
    if out.size == 0:
        return 0.0
    return float(t[out[-1] + 1] - t[0])


def tracking_report(time: np.ndarray, v: np.ndarray,
                    profile, t_end: float,
                    transient: float = 1.0) -> TrackingReport:
    """Summarize a velocity trace against a (t, v_command) profile.

    ``profile`` lists command changes; segments partition [profile[0].t,
    t_end].  Windowed means exclude ``transient`` seconds after each change.
    """
    time = np.asarray(time, float)
    v = np.asarray(v, float)
    prof = sorted((float(t), float(c)) for t, c in profile)
    if not prof:
        raise ValueError("profile must contain at least one command")
    edges = [t for t, _ in prof] + [float(t_end)]
    segs = []
    prev_cmd = prof[0][1]
    for k, (t0, cmd) in enumerate(prof):
        t1 = edges[k + 1]
        sel = (time >= t0) & (time < t1)
        sel_mean = sel & (time >= t0 + transient)
        if not sel_mean.any():
            sel_mean = sel
        v_mean = float(v[sel_mean].mean()) if sel_mean.any() else float("nan")
        settle = (_settling_time(time[sel], v[sel], cmd, cmd - prev_cmd)
                  if sel.any() else float("nan"))
        segs.append(TrackingSegment(
            t_start=t0, t_end=t1, v_command=cmd, v_mean=v_mean,
            abs_error=abs(v_mean - cmd), settling_time=settle))
        prev_cmd = cmd
    return TrackingReport(segments=tuple(segs))


def run_tracking_eval(policy, env: WalkingEnv, cfg: EpisodeConfig,
                      profile, transient: float = 1.0,
                      seed=None):
    """Roll out a policy under a commanded speed profile and summarize it.

    Returns (TrackingReport, RolloutResult).  Commands must stay inside the
    training range [0.7, 1.5] m/s.
    """
    for _, c in profile:
        if not cfg.v_d_range[0] <= c <= cfg.v_d_range[1]:
            raise ValueError(f"commanded speed {c} outside {cfg.v_d_range}")
    res = rollout(policy, env, cfg, seed=seed, v_d_schedule=list(profile),
                  keep_log=True)
    rep = tracking_report(res.log.time, res.log.v_inst, profile,
                          t_end=res.final_time, transient=transient)
    return rep, res


# ---------------------------------------------------------------------------
# Push disturbances
# ---------------------------------------------------------------------------

PUSH_SMALL_N = 40.0
PUSH_LARGE_N = 90.0
PUSH_DURATION_S = 0.1
PUSH_TIMES_S = (2.0, 4.0, 6.0)


@dataclass(frozen=True)
class DisturbanceSchedule:
    """Scheduled horizontal torso pushes with non-overlapping windows."""

    forces: tuple[ExternalForce, ...]
    direction: str = "backward"
    magnitude_class: str = "custom"

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        spans = sorted((f.t_on, f.t_off) for f in self.forces)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ValueError("push windows must not overlap")


def make_push_schedule(magnitude: float, direction: str = "backward",
                       times=PUSH_TIMES_S,
                       duration: float = PUSH_DURATION_S) -> DisturbanceSchedule:
    """Horizontal torso pushes of ``magnitude`` newtons at the given times."""
    sign = 1.0 if direction == "forward" else -1.0
    cls = ("small" if magnitude == PUSH_SMALL_N
           else "large" if magnitude == PUSH_LARGE_N else "custom")
    forces = tuple(ExternalForce(fx=sign * magnitude, t_on=t,
                                 t_off=t + duration) for t in times)
    return DisturbanceSchedule(forces=forces, direction=direction,
                               magnitude_class=cls)


@dataclass(frozen=True)
class PushTrialResult:
    """Outcome of one scheduled-push episode."""

    outcome: str                 # "survived" or "fell"
    fell_time: float | None
    termination: str
    tracking: TrackingReport
    steps_completed: int
    log: RolloutLog


def run_push_trial(policy, env: WalkingEnv, cfg: EpisodeConfig,
                   schedule: DisturbanceSchedule, v_d: float,
                   seed=None) -> PushTrialResult:
    """Roll out under the schedule's forces at a constant commanded speed."""
    res = rollout(policy, env, cfg, disturbance=list(schedule.forces),
                  seed=seed, v_d_schedule=[(0.0, v_d)], keep_log=True)
    survived = res.termination == "timeout"
    rep = tracking_report(res.log.time, res.log.v_inst, [(0.0, v_d)],
                          t_end=res.final_time)
    return PushTrialResult(
        outcome="survived" if survived else "fell",
        fell_time=None if survived else res.final_time,
        termination=res.termination,
        tracking=rep,
        steps_completed=res.steps_completed,
        log=res.log)


def push_sweep(policy, env: WalkingEnv, cfg: EpisodeConfig,
               magnitudes, direction: str, v_d: float,
               seed=None) -> list[dict]:
    """Trial each push magnitude; returns one outcome record per magnitude."""
    rows = []
    for mag in magnitudes:
        sched = make_push_schedule(float(mag), direction)
        trial = run_push_trial(policy, env, cfg, sched, v_d, seed=seed)
        rows.append({"magnitude": float(mag), "direction": direction,
                     "outcome": trial.outcome, "fell_time": trial.fell_time,
                     "steps": trial.steps_completed})
    return rows


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

TRAJECTORY_COLUMNS = (
    ["time"]
    + [f"q{i}" for i in range(5)]
    + [f"dq{i}" for i in range(5)]
    + [f"u{i}" for i in range(4)]
    + ["tau_phase", "step_index", "event_flag"]
)

_TRAJ_SRC_COLS = (
    [rk.COL_TIME]
    + list(range(rk.COL_Q, rk.COL_Q + 5))
    + list(range(rk.COL_DQ, rk.COL_DQ + 5))
    + list(range(rk.COL_U, rk.COL_U + 4))
    + [rk.COL_TAU, rk.COL_STEP, rk.COL_EVENT]
)


def _write_csv(path, header, rows) -> None:
    try:
        with open(path, "w") as f:
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(f"{x:.17g}" for x in row) + "\n")
    except OSError as exc:
        raise SimulationError(f"could not write {path}: {exc}") from exc


def export_trajectory_csv(log: RolloutLog, path) -> None:
    """One row per simulation step; %.17g fields round-trip bit-exactly."""
    _write_csv(path, TRAJECTORY_COLUMNS, log.data[:, _TRAJ_SRC_COLS])


def read_trajectory_csv(path) -> np.ndarray:
    """Load a trajectory CSV back as a float array (rows x columns)."""
    return np.loadtxt(path, delimiter=",", skiprows=1,
                      ndmin=2).reshape(-1, len(TRAJECTORY_COLUMNS))


def export_phase_plane_csv(log: RolloutLog, path) -> None:
    """(q_i, dq_i) pairs per row for limit-cycle plots."""
    header = [h for i in range(5) for h in (f"q{i}", f"dq{i}")]
    cols = [c for i in range(5) for c in (rk.COL_Q + i, rk.COL_DQ + i)]
    _write_csv(path, header, log.data[:, cols])


_SVG_LINKS = ("stance_knee", "hip", "torso_tip", "hip",
              "swing_knee", "swing_foot")


def _frame_svg(points: dict, x_lo: float, x_hi: float) -> str:
    """Render one stick figure as a standalone SVG string."""
    scale = 120.0
    width = (x_hi - x_lo) * scale
    height = 2.0 * scale

    def sx(x):
        return (x - x_lo) * scale

    def sy(y):
        return height - (y + 0.2) * scale

    chain = [points["stance_foot"]] + [points[name] for name in _SVG_LINKS]
    pts = " ".join(f"{sx(p[0]):.2f},{sy(p[1]):.2f}" for p in chain)
    hip = points["hip"]
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">\n'
        f'<line x1="0" y1="{sy(0.0):.2f}" x2="{width:.0f}" '
        f'y2="{sy(0.0):.2f}" stroke="#999" stroke-width="1"/>\n'
        f'<polyline points="{pts}" fill="none" stroke="#000" '
        f'stroke-width="3" stroke-linecap="round"/>\n'
        f'<circle cx="{sx(hip[0]):.2f}" cy="{sy(hip[1]):.2f}" r="4" '
        f'fill="#000"/>\n</svg>\n')


def export_stick_frames(log: RolloutLog, robot, out_dir,
                        every: int = 25) -> list[str]:
    """Write stick-figure frames as ``frame_%06d.svg``; returns the paths.

    ``every`` subsamples the log (default one frame per 25 steps, i.e. every
    50 ms at the 2 ms step).
    """
    os.makedirs(out_dir, exist_ok=True)
    idx = np.arange(0, log.data.shape[0], max(1, int(every)))
    sfx = log.stance_foot_x
    x_lo = float(sfx.min()) - 1.0 if idx.size else -1.0
    x_hi = float(sfx.max()) + 1.0 if idx.size else 1.0
    paths = []
    for n, i in enumerate(idx):
        fk = forward_kinematics(log.q[i], robot)
        shift = np.array([sfx[i], 0.0])
        points = {"stance_foot": shift}
        for name in _SVG_LINKS:
            points[name] = getattr(fk, name) + shift
        path = os.path.join(out_dir, f"frame_{n:06d}.svg")
        try:
            with open(path, "w") as f:
                f.write(_frame_svg(points, x_lo, x_hi))
        except OSError as exc:
            raise SimulationError(f"could not write {path}: {exc}") from exc
        paths.append(path)
    return paths
