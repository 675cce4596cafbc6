"""Adaptive PD tracking of the virtual constraints.

The proportional gain is fixed; the derivative gain is supplied per walking
step by the policy.  The error convention is e = q_desired - q_actual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PDGains:
    kp: float = 150.0
    kd: float = 10.0
    torque_limit: float = 150.0

    def __post_init__(self):
        if self.kp <= 0 or self.kd < 0 or self.torque_limit <= 0:
            raise ValueError("kp and torque_limit must be positive, kd non-negative")


def pd_torque(e: np.ndarray, de: np.ndarray, gains: PDGains) -> np.ndarray:
    """Saturated joint torques u = clamp(kp*e + kd*de)."""
    u = gains.kp * np.asarray(e, float) + gains.kd * np.asarray(de, float)
    return np.clip(u, -gains.torque_limit, gains.torque_limit)
