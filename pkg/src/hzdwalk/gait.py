"""Virtual-constraint layer: phase variable, Bezier desired outputs, and the
20-to-24 coefficient expansion that makes the step endpoints swap-invariant.

The 4x6 coefficient matrix ``alpha`` has one row per actuated joint in the
order (q_sh, q_sk, q_nsh, q_nsk) and one column per Bernstein coefficient
k = 0..5.  The historical flat numbering alpha[1..24] is coefficient-major:
alpha[4k + j] is joint j's k-th coefficient.  Under that numbering the four
constrained entries are alpha[1]=alpha[23], alpha[2]=alpha[24],
alpha[3]=alpha[21], alpha[4]=alpha[22]; equivalently, column 5 equals column 0
with the stance and swing legs swapped, so the desired posture at the end of a
step relabels into the desired posture at the start of the next one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import ChainTables, RobotParams, hip_jacobian, hip_position_x

# Bernstein basis binomial weights, degrees 5 and 4.
_BINOM5 = np.array([1.0, 5.0, 10.0, 10.0, 5.0, 1.0])
_BINOM4 = np.array([1.0, 4.0, 6.0, 4.0, 1.0])

# Leg-swap permutation on actuated-joint rows.
_SWAP = np.array([2, 3, 0, 1])

N_FREE = 20


@dataclass(frozen=True)
class PhaseConfig:
    """Hip-position endpoints of one step (phase 0 and phase 1)."""

    p_begin: float = -0.175
    p_end: float = 0.175

    def __post_init__(self):
        if self.p_end <= self.p_begin:
            raise ValueError("p_end must exceed p_begin")

    @property
    def span(self) -> float:
        return self.p_end - self.p_begin


@dataclass(frozen=True)
class JointBounds:
    """Per-joint intervals constraining every Bezier coefficient.

    Knee lower bounds stay positive to exclude hyperextension.
    """

    lo: np.ndarray = field(default_factory=lambda: np.array([-0.8, 0.05, -0.8, 0.05]))
    hi: np.ndarray = field(default_factory=lambda: np.array([0.8, 1.5, 0.8, 1.5]))

    def __post_init__(self):
        if np.any(self.hi <= self.lo):
            raise ValueError("upper bounds must exceed lower bounds")

    def check_alpha(self, alpha: np.ndarray) -> None:
        if np.any(alpha < self.lo[:, None] - 1e-12) or np.any(alpha > self.hi[:, None] + 1e-12):
            raise ValueError("Bezier coefficient outside joint bounds")

    def free_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Bound vectors for the 20 free coefficients (coefficient-major)."""
        lo = np.tile(self.lo, 5)
        hi = np.tile(self.hi, 5)
        return lo, hi


def expand_free_params(free: np.ndarray, bounds: JointBounds | None = None) -> np.ndarray:
    """Fill the 4x6 coefficient matrix from the 20 free values.

    The free vector is coefficient-major over columns 0..4; column 5 is the
    leg-swapped copy of column 0.
    """
    free = np.asarray(free, float)
    if free.shape != (N_FREE,):
        raise ValueError(f"expected {N_FREE} free coefficients, got {free.shape}")
    alpha = np.empty((4, 6))
    alpha[:, :5] = free.reshape(5, 4).T
    alpha[:, 5] = alpha[_SWAP, 0]
    if bounds is not None:
        bounds.check_alpha(alpha)
    return alpha


def extract_free_params(alpha: np.ndarray) -> np.ndarray:
    """Inverse of expand_free_params (drops the constrained column)."""
    return np.asarray(alpha)[:, :5].T.ravel().copy()


def phase(q: np.ndarray, cfg: PhaseConfig, params: RobotParams,
          tables: ChainTables | None = None) -> float:
    """Scaled forward hip position, clamped to [0, 1]."""
    p = hip_position_x(q, params, tables)
    return float(np.clip((p - cfg.p_begin) / cfg.span, 0.0, 1.0))


def bezier_eval(coeffs: np.ndarray, tau: float) -> np.ndarray:
    """Degree-5 Bernstein evaluation; rows of a matrix evaluate in one call."""
    coeffs = np.asarray(coeffs, float)
    k = np.arange(6)
    basis = _BINOM5 * tau ** k * (1.0 - tau) ** (5 - k)
    return coeffs @ basis


def bezier_derivative(coeffs: np.ndarray, tau: float) -> np.ndarray:
    """d/dtau of the degree-5 curve: 5 x (degree-4 curve on differences)."""
    coeffs = np.asarray(coeffs, float)
    diff = np.diff(coeffs, axis=-1)
    k = np.arange(5)
    basis = _BINOM4 * tau ** k * (1.0 - tau) ** (4 - k)
    return 5.0 * (diff @ basis)


@dataclass(frozen=True)
class DesiredOutputs:
    q_d: np.ndarray
    dq_d: np.ndarray


def desired_outputs(q: np.ndarray, dq: np.ndarray, alpha: np.ndarray,
                    cfg: PhaseConfig, params: RobotParams,
                    tables: ChainTables | None = None) -> DesiredOutputs:
    """Desired actuated-joint positions and velocities at the current phase.

    The phase rate comes from the hip velocity; it is zeroed while the phase
    is clamped so the desired trajectory stays bounded during overshoot.
    """
    if tables is None:
        tables = ChainTables(params)
    p = hip_position_x(q, params, tables)
    raw = (p - cfg.p_begin) / cfg.span
    tau = float(np.clip(raw, 0.0, 1.0))
    q_d = bezier_eval(alpha, tau)
    if 0.0 <= raw <= 1.0:
        tau_dot = (hip_jacobian(q, params, tables)[0] @ dq) / cfg.span
        dq_d = bezier_derivative(alpha, tau) * tau_dot
    else:
        dq_d = np.zeros(4)
    return DesiredOutputs(q_d=q_d, dq_d=dq_d)


def virtual_constraint_error(q: np.ndarray, dq: np.ndarray, alpha: np.ndarray,
                             cfg: PhaseConfig, params: RobotParams,
                             tables: ChainTables | None = None):
    """Output error y2 = actual - desired and its rate, actuated joints only."""
    des = desired_outputs(q, dq, alpha, cfg, params, tables)
    e = q[1:5] - des.q_d
    de = dq[1:5] - des.dq_d
    return e, de


def save_gait_json(alpha: np.ndarray, kd: float, path) -> None:
    with open(path, "w") as f:
        json.dump({"alpha": np.asarray(alpha).tolist(), "kd": float(kd)}, f, indent=2)
        f.write("\n")


def load_gait_json(path) -> tuple[np.ndarray, float]:
    with open(path) as f:
        d = json.load(f)
    alpha = np.asarray(d["alpha"], float)
    if alpha.shape != (4, 6):
        raise ValueError(f"gait file must hold a 4x6 coefficient matrix, got {alpha.shape}")
    return alpha, float(d["kd"])
