"""Hot numerical kernels for the pinned five-link model.

All kernels take the packed geometry arrays (segment-angle rows ``A``, cosine
signs ``sgn``, center-of-mass coefficient table ``K``, masses, inertias) so
they stay free of Python objects and can be JIT-compiled.  When numba is
available the kernels are compiled at import; otherwise the plain numpy
versions run as-is.
"""

from __future__ import annotations

import numpy as np


def _mass_bias(A, sgn, K, m, inr, g, q, dq):
    """Mass matrix D(q) and bias C(q,dq)dq + G(q) of the pinned model."""
    a = A @ q
    s = np.sin(a)
    c = np.cos(a)
    w = A @ dq
    ww = w * w
    D = np.zeros((5, 5))
    bias = np.zeros(5)
    for i in range(5):
        jx = (K[i] * c) @ A
        jy = (-(K[i] * sgn) * s) @ A
        D += m[i] * (np.outer(jx, jx) + np.outer(jy, jy))
        ax = -np.sum(K[i] * ww * s)
        ay = -np.sum(K[i] * sgn * ww * c)
        bias += m[i] * (jx * ax + jy * (ay + g))
    D += (A * inr.reshape(5, 1)).T @ A
    return D, bias


def _forward_dyn(A, sgn, K, m, inr, g, q, dq, u, fx):
    """Joint accelerations for torques u (4 actuated) and a horizontal torso
    force fx applied at the torso center of mass."""
    D, bias = _mass_bias(A, sgn, K, m, inr, g, q, dq)
    rhs = -bias
    rhs[1] += u[0]
    rhs[2] += u[1]
    rhs[3] += u[2]
    rhs[4] += u[3]
    if fx != 0.0:
        c = np.cos(A @ q)
        jx = (K[0] * c) @ A
        rhs += jx * fx
    return np.linalg.solve(D, rhs)


def _rk4_step(A, sgn, K, m, inr, g, q, dq, u, fx, dt):
    """Classical fourth-order step with the torque held over the interval."""
    k1q = dq
    k1v = _forward_dyn(A, sgn, K, m, inr, g, q, dq, u, fx)
    h = 0.5 * dt
    k2q = dq + h * k1v
    k2v = _forward_dyn(A, sgn, K, m, inr, g, q + h * k1q, k2q, u, fx)
    k3q = dq + h * k2v
    k3v = _forward_dyn(A, sgn, K, m, inr, g, q + h * k2q, k3q, u, fx)
    k4q = dq + dt * k3v
    k4v = _forward_dyn(A, sgn, K, m, inr, g, q + dt * k3q, k4q, u, fx)
    qn = q + (dt / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    dqn = dq + (dt / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
    return qn, dqn


def _swing_geom(A, sgn, swing_row, q, dq):
    """Swing-foot x, height, and vertical velocity."""
    a = A @ q
    s = np.sin(a)
    c = np.cos(a)
    w = A @ dq
    x = swing_row @ s
    y = (swing_row * sgn) @ c
    vy = (-(swing_row * sgn) * s) @ w
    return x, y, vy


def _hip_vx(A, sgn, hip_row, q, dq):
    """Forward hip velocity (x component)."""
    c = np.cos(A @ q)
    return ((hip_row * c) @ A) @ dq


try:  # pragma: no cover - exercised implicitly when numba is installed
    from numba import njit

    _mass_bias = njit(cache=True)(_mass_bias)
    _forward_dyn = njit(cache=True)(_forward_dyn)
    _rk4_step = njit(cache=True)(_rk4_step)
    _swing_geom = njit(cache=True)(_swing_geom)
    _hip_vx = njit(cache=True)(_hip_vx)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

mass_bias = _mass_bias
forward_dyn = _forward_dyn
rk4_step = _rk4_step
swing_geom = _swing_geom
hip_vx = _hip_vx
