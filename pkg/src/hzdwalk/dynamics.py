"""Hybrid dynamics of the pinned five-link biped.

Continuous flow is the standard Lagrangian model of the stance-pinned chain
(5 DOF, 4 actuated joints, torso coordinate unactuated), advanced by a
fixed-step fourth-order integrator with bisection localization of the
swing-foot touchdown guard.  Touchdown triggers an instantaneous plastic
impact on the unpinned 7-DOF model followed by stance/swing relabeling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as ker
from .model import (
    ChainTables,
    RobotParams,
    SEG_ANGLE_ROWS,
    SEG_COS_SIGN,
)

# Relabeling permutation: swap stance/swing hip and knee coordinates.
RELABEL = np.eye(5)[[0, 3, 4, 1, 2]]

DIVERGENCE_LIMIT = 1e6


class SimulationError(RuntimeError):
    pass


class DivergenceError(SimulationError):
    """A state magnitude exceeded the divergence limit."""


class SingularMassMatrixError(SimulationError):
    def __init__(self, cond):
        super().__init__(f"mass matrix numerically singular (cond ~ {cond:.3e})")
        self.cond = cond


class ImpactError(SimulationError):
    """Impact requires an infeasible contact impulse."""


@dataclass
class HybridState:
    """Pinned-model state plus step bookkeeping."""

    q: np.ndarray
    dq: np.ndarray
    time: float = 0.0
    step_index: int = 0
    stance_foot_x: float = 0.0

    def copy(self) -> "HybridState":
        return HybridState(self.q.copy(), self.dq.copy(), self.time,
                           self.step_index, self.stance_foot_x)


@dataclass(frozen=True)
class ExternalForce:
    """Horizontal force at the torso center of mass over [t_on, t_off)."""

    fx: float
    t_on: float
    t_off: float

    def __post_init__(self):
        if self.t_off <= self.t_on:
            raise ValueError("t_off must exceed t_on")

    def value_at(self, t: float) -> float:
        return self.fx if self.t_on <= t < self.t_off else 0.0


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.002
    guard_tolerance: float = 1e-6
    event_bisection_tol: float = 1e-9

    def __post_init__(self):
        if self.dt <= 0 or self.guard_tolerance <= 0 or self.event_bisection_tol <= 0:
            raise ValueError("dt and tolerances must be positive")


def force_at(forces, t: float) -> float:
    """Sum of active external forces at time t (accepts one, many, or None)."""
    if forces is None:
        return 0.0
    if isinstance(forces, ExternalForce):
        return forces.value_at(t)
    return sum(f.value_at(t) for f in forces)


class Dynamics:
    """Equations of motion and hybrid transitions for one parameter set."""

    def __init__(self, params: RobotParams, friction_mu: float = 0.8):
        self.params = params
        self.tables = ChainTables(params)
        self.friction_mu = friction_mu
        t = self.tables
        self._args = (SEG_ANGLE_ROWS, SEG_COS_SIGN, t.com,
                      t.masses, t.inertias, t.gravity)

    # -- continuous phase -------------------------------------------------

    def mass_matrix(self, q: np.ndarray) -> np.ndarray:
        D, _ = ker.mass_bias(*self._args, q, np.zeros(5))
        return D

    def bias_forces(self, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
        _, bias = ker.mass_bias(*self._args, q, dq)
        return bias

    def gravity_vector(self, q: np.ndarray) -> np.ndarray:
        return self.bias_forces(q, np.zeros(5))

    def forward_dynamics(self, q, dq, u, fx: float = 0.0) -> np.ndarray:
        try:
            ddq = ker.forward_dyn(*self._args, q, dq, np.asarray(u, float), fx)
        except Exception:
            cond = np.linalg.cond(self.mass_matrix(q))
            raise SingularMassMatrixError(cond) from None
        if not np.all(np.isfinite(ddq)):
            cond = np.linalg.cond(self.mass_matrix(q))
            raise SingularMassMatrixError(cond)
        return ddq

    def kinetic_energy(self, q, dq) -> float:
        D = self.mass_matrix(q)
        return float(0.5 * dq @ D @ dq)

    def potential_energy(self, q) -> float:
        t = self.tables
        a = SEG_ANGLE_ROWS @ q
        com_y = (t.com * SEG_COS_SIGN) @ np.cos(a)
        return float(t.gravity * t.masses @ com_y)

    def total_energy(self, q, dq) -> float:
        return self.kinetic_energy(q, dq) + self.potential_energy(q)

    def swing_foot_geom(self, q, dq):
        """(x, height, vertical velocity) of the swing foot."""
        return ker.swing_geom(SEG_ANGLE_ROWS, SEG_COS_SIGN,
                              self.tables.swing_foot, q, dq)

    def hip_forward_velocity(self, q, dq) -> float:
        return float(ker.hip_vx(SEG_ANGLE_ROWS, SEG_COS_SIGN,
                                self.tables.hip, q, dq))

    def _rk4(self, q, dq, u, fx, dt):
        return ker.rk4_step(*self._args, q, dq, u, fx, dt)

    def integrate(self, state: HybridState, controller, forces,
                  cfg: IntegratorConfig):
        """Advance one fixed step; localize the touchdown guard if crossed.

        ``controller(state, t) -> u`` supplies the 4 joint torques, held
        constant over the step (zero-order hold).  Returns the advanced
        state and a flag telling whether it sits on the guard surface.
        """
        q, dq, t0 = state.q, state.dq, state.time
        u = np.asarray(controller(state, t0), float)
        fx = force_at(forces, t0)
        qn, dqn = self._rk4(q, dq, u, fx, cfg.dt)
        if max(np.max(np.abs(qn)), np.max(np.abs(dqn))) > DIVERGENCE_LIMIT:
            raise DivergenceError(f"state magnitude exceeded {DIVERGENCE_LIMIT:g} at t={t0:.4f}")

        _, h0, _ = self.swing_foot_geom(q, dq)
        _, h1, _ = self.swing_foot_geom(qn, dqn)
        if h0 >= 0.0 > h1:
            lo, hi = 0.0, cfg.dt
            while hi - lo > cfg.event_bisection_tol:
                mid = 0.5 * (lo + hi)
                qm, dqm = self._rk4(q, dq, u, fx, mid)
                _, hm, _ = self.swing_foot_geom(qm, dqm)
                if hm >= 0.0:
                    lo = mid
                else:
                    hi = mid
            s = 0.5 * (lo + hi)
            qe, dqe = self._rk4(q, dq, u, fx, s)
            xe, _, vye = self.swing_foot_geom(qe, dqe)
            if xe > 0.0 and vye < 0.0:
                ev = HybridState(qe, dqe, t0 + s, state.step_index,
                                 state.stance_foot_x)
                return ev, True

        nxt = HybridState(qn, dqn, t0 + cfg.dt, state.step_index,
                          state.stance_foot_x)
        return nxt, False

    # -- impact phase -----------------------------------------------------

    def _extended_matrices(self, q):
        """Unpinned-model mass matrix (hip position free) and contact rows."""
        t = self.tables
        a = SEG_ANGLE_ROWS @ q
        s, c = np.sin(a), np.cos(a)
        De = np.zeros((7, 7))
        for i in range(5):
            row = t.com_from_hip[i]
            J = np.zeros((2, 7))
            J[0, :5] = (row * c) @ SEG_ANGLE_ROWS
            J[1, :5] = (-(row * SEG_COS_SIGN) * s) @ SEG_ANGLE_ROWS
            J[0, 5] = 1.0
            J[1, 6] = 1.0
            De += t.masses[i] * (J.T @ J)
        De[:5, :5] += (SEG_ANGLE_ROWS * t.inertias[:, None]).T @ SEG_ANGLE_ROWS

        row = t.swing_foot_from_hip
        Jc = np.zeros((2, 7))
        Jc[0, :5] = (row * c) @ SEG_ANGLE_ROWS
        Jc[1, :5] = (-(row * SEG_COS_SIGN) * s) @ SEG_ANGLE_ROWS
        Jc[0, 5] = 1.0
        Jc[1, 6] = 1.0
        return De, Jc

    def impact_solve(self, q, dq):
        """Post-impact extended velocity and ground impulse at the new contact."""
        from .model import hip_jacobian

        De, Jc = self._extended_matrices(q)
        hip_vel = hip_jacobian(q, self.params, self.tables) @ dq
        dq_minus = np.concatenate([dq, hip_vel])

        kkt = np.zeros((9, 9))
        kkt[:7, :7] = De
        kkt[:7, 7:] = -Jc.T
        kkt[7:, :7] = Jc
        rhs = np.concatenate([De @ dq_minus, np.zeros(2)])
        sol = np.linalg.solve(kkt, rhs)
        dq_plus = sol[:7]
        impulse = sol[7:]
        return dq_minus, dq_plus, impulse, De

    def impact_map(self, state: HybridState) -> HybridState:
        """Plastic impact at the swing foot followed by leg relabeling."""
        q, dq = state.q, state.dq
        dq_minus, dq_plus, impulse, _ = self.impact_solve(q, dq)

        ft, fn = impulse
        if fn < -1e-9:
            raise ImpactError(f"impact requires tensile vertical impulse ({fn:.3e} N*s)")
        if abs(ft) > self.friction_mu * max(fn, 0.0) + 1e-9:
            raise ImpactError(
                f"impulse outside friction cone (|{ft:.3e}| > mu*{fn:.3e})")

        swing_x, _, _ = self.swing_foot_geom(q, dq)
        q_new = RELABEL @ q
        dq_new = RELABEL @ dq_plus[:5]
        return HybridState(q_new, dq_new, state.time, state.step_index + 1,
                           state.stance_foot_x + float(swing_x))
