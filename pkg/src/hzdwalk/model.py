"""Kinematic and inertial description of a five-link planar biped.

Coordinate ordering is fixed everywhere as ``q = (q_t, q_sh, q_sk, q_nsh,
q_nsk)``: absolute torso angle from vertical (positive = forward lean), stance
hip (thigh relative to torso), stance knee (shin relative to thigh, positive
flexion folds the shin backward), then the swing-leg counterparts.  The stance
foot is pinned at the world origin; +x is the walking direction, +y is up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# Coordinate indices into q / dq vectors.
QT, QSH, QSK, QNSH, QNSK = 0, 1, 2, 3, 4

NQ = 5  # pinned-model degrees of freedom

# Segment indices (one rigid segment per physical link).
SEG_TORSO, SEG_ST_FEMUR, SEG_ST_TIBIA, SEG_SW_FEMUR, SEG_SW_TIBIA = range(5)

# Absolute segment angle = SEG_ANGLE_ROWS @ q.
SEG_ANGLE_ROWS = np.array(
    [
        [1.0, 0.0, 0.0, 0.0, 0.0],   # torso
        [1.0, 1.0, 0.0, 0.0, 0.0],   # stance femur
        [1.0, 1.0, -1.0, 0.0, 0.0],  # stance tibia
        [1.0, 0.0, 0.0, 1.0, 0.0],   # swing femur
        [1.0, 0.0, 0.0, 1.0, -1.0],  # swing tibia
    ]
)

# Segment unit vector at angle a is (sin a, sign * cos a): the torso points up
# at zero angle, leg segments point down (proximal to distal).
SEG_COS_SIGN = np.array([1.0, -1.0, -1.0, -1.0, -1.0])


@dataclass(frozen=True)
class LinkParams:
    """Geometry and inertia of one link.

    ``com_offset`` is the distance from the link's proximal joint to its
    center of mass, measured along the link axis.  ``inertia_com`` is about
    the out-of-plane axis through the center of mass.
    """

    length: float
    mass: float
    inertia_com: float
    com_offset: float

    def __post_init__(self):
        if self.length <= 0 or self.mass <= 0 or self.inertia_com <= 0:
            raise ValueError("length, mass and inertia_com must be positive")
        if not 0.0 <= self.com_offset <= self.length:
            raise ValueError("com_offset must lie within [0, length]")


@dataclass(frozen=True)
class RobotParams:
    """Five-link biped: one torso plus identical femur/tibia pairs."""

    torso: LinkParams
    femur: LinkParams
    tibia: LinkParams
    gravity: float = 9.81

    @staticmethod
    def default() -> "RobotParams":
        """RABBIT-class parameter set (32 kg total, 0.8 m hip height)."""
        return RobotParams(
            torso=LinkParams(length=0.63, mass=12.0, inertia_com=1.33, com_offset=0.315),
            femur=LinkParams(length=0.4, mass=6.8, inertia_com=0.47, com_offset=0.2),
            tibia=LinkParams(length=0.4, mass=3.2, inertia_com=0.2, com_offset=0.2),
        )

    @property
    def total_mass(self) -> float:
        return self.torso.mass + 2.0 * self.femur.mass + 2.0 * self.tibia.mass

    @property
    def leg_length(self) -> float:
        return self.femur.length + self.tibia.length

    def to_dict(self) -> dict:
        out = {"gravity": self.gravity}
        for name in ("torso", "femur", "tibia"):
            link: LinkParams = getattr(self, name)
            out[name] = {
                "length": link.length,
                "mass": link.mass,
                "inertia_com": link.inertia_com,
                "com_offset": link.com_offset,
            }
        return out

    @staticmethod
    def from_dict(d: dict) -> "RobotParams":
        links = {name: LinkParams(**d[name]) for name in ("torso", "femur", "tibia")}
        return RobotParams(gravity=d.get("gravity", 9.81), **links)

    def save_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @staticmethod
    def load_json(path) -> "RobotParams":
        with open(path) as f:
            return RobotParams.from_dict(json.load(f))


class ChainTables:
    """Precomputed coefficient tables for the pinned kinematic chain.

    Every point of interest is a linear combination of the five segment unit
    vectors; each table row holds the coefficients of one point.  Built once
    per parameter set and shared by kinematics and dynamics.
    """

    def __init__(self, params: RobotParams):
        lf, lt = params.femur.length, params.tibia.length
        ltor = params.torso.length
        cf, ct = params.femur.com_offset, params.tibia.com_offset
        ctor = params.torso.com_offset

        # Named points, relative to the pinned stance foot.
        self.hip = np.array([0.0, -lf, -lt, 0.0, 0.0])
        self.stance_knee = np.array([0.0, 0.0, -lt, 0.0, 0.0])
        self.torso_tip = np.array([ltor, -lf, -lt, 0.0, 0.0])
        self.swing_knee = np.array([0.0, -lf, -lt, lf, 0.0])
        self.swing_foot = np.array([0.0, -lf, -lt, lf, lt])

        # Per-link center-of-mass rows, ordered like the segments.
        self.com = np.array(
            [
                [ctor, -lf, -lt, 0.0, 0.0],
                [0.0, cf - lf, -lt, 0.0, 0.0],
                [0.0, 0.0, ct - lt, 0.0, 0.0],
                [0.0, -lf, -lt, cf, 0.0],
                [0.0, -lf, -lt, lf, ct],
            ]
        )

        self.masses = np.array(
            [params.torso.mass, params.femur.mass, params.tibia.mass,
             params.femur.mass, params.tibia.mass]
        )
        self.inertias = np.array(
            [params.torso.inertia_com, params.femur.inertia_com, params.tibia.inertia_com,
             params.femur.inertia_com, params.tibia.inertia_com]
        )
        self.gravity = params.gravity

        # Unpinned variant: points relative to the hip (used by the impact
        # model, where the hip position becomes a free coordinate).
        self.com_from_hip = self.com - self.hip
        self.swing_foot_from_hip = self.swing_foot - self.hip


def segment_angles(q: np.ndarray) -> np.ndarray:
    return SEG_ANGLE_ROWS @ q


def point_position(coeffs: np.ndarray, q: np.ndarray) -> np.ndarray:
    """World position of a chain point given its coefficient row."""
    a = segment_angles(q)
    return np.array(
        [coeffs @ np.sin(a), (coeffs * SEG_COS_SIGN) @ np.cos(a)]
    )


def point_jacobian(coeffs: np.ndarray, q: np.ndarray) -> np.ndarray:
    """2x5 Jacobian of a chain point with respect to q."""
    a = segment_angles(q)
    dx = (coeffs * np.cos(a)) @ SEG_ANGLE_ROWS
    dy = (-coeffs * SEG_COS_SIGN * np.sin(a)) @ SEG_ANGLE_ROWS
    return np.vstack([dx, dy])


@dataclass(frozen=True)
class FramePositions:
    """Planar positions (m) of the named chain points, stance foot at origin."""

    stance_knee: np.ndarray
    hip: np.ndarray
    torso_tip: np.ndarray
    swing_knee: np.ndarray
    swing_foot: np.ndarray
    link_com: np.ndarray  # 5x2, ordered (torso, st femur, st tibia, sw femur, sw tibia)


def forward_kinematics(q: np.ndarray, params: RobotParams,
                       tables: ChainTables | None = None) -> FramePositions:
    t = tables if tables is not None else ChainTables(params)
    a = segment_angles(q)
    sa, ca = np.sin(a), np.cos(a)

    def pos(coeffs):
        return np.array([coeffs @ sa, (coeffs * SEG_COS_SIGN) @ ca])

    return FramePositions(
        stance_knee=pos(t.stance_knee),
        hip=pos(t.hip),
        torso_tip=pos(t.torso_tip),
        swing_knee=pos(t.swing_knee),
        swing_foot=pos(t.swing_foot),
        link_com=np.array([pos(row) for row in t.com]),
    )


def hip_position_x(q: np.ndarray, params: RobotParams,
                   tables: ChainTables | None = None) -> float:
    t = tables if tables is not None else ChainTables(params)
    return float(point_position(t.hip, q)[0])


def hip_height(q: np.ndarray, params: RobotParams,
               tables: ChainTables | None = None) -> float:
    t = tables if tables is not None else ChainTables(params)
    return float(point_position(t.hip, q)[1])


def swing_foot_height(q: np.ndarray, params: RobotParams,
                      tables: ChainTables | None = None) -> float:
    t = tables if tables is not None else ChainTables(params)
    return float(point_position(t.swing_foot, q)[1])


def hip_jacobian(q: np.ndarray, params: RobotParams,
                 tables: ChainTables | None = None) -> np.ndarray:
    t = tables if tables is not None else ChainTables(params)
    return point_jacobian(t.hip, q)


def hip_velocity(q: np.ndarray, dq: np.ndarray, params: RobotParams,
                 tables: ChainTables | None = None) -> np.ndarray:
    return hip_jacobian(q, params, tables) @ dq
