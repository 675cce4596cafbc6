"""hzdwalk: a five-link planar biped walking toolkit.

Hybrid rigid-body dynamics with a plastic ground impact, Bezier-curve
virtual constraints tracked by a PD law, a small bounded-output policy
network trained by evolution strategies or PPO, and an evaluation suite
for speed tracking, limit-cycle diagnostics, and push-disturbance trials.
"""

from .model import (ChainTables, FramePositions, LinkParams, RobotParams,
                    forward_kinematics)
from .dynamics import (Dynamics, DivergenceError, ExternalForce, HybridState,
                       ImpactError, IntegratorConfig, SimulationError)
from .gait import (JointBounds, PhaseConfig, bezier_derivative, bezier_eval,
                   expand_free_params, extract_free_params, load_gait_json,
                   save_gait_json)
from .control import PDGains, pd_torque
from .policy import (ConstantGaitPolicy, Observation, ObsWindow, PolicyParams,
                     policy_output_bounds, warm_start_policy)
from .train import (EpisodeConfig, EsConfig, PpoConfig, RolloutLog,
                    RolloutResult, WalkingEnv, es_train, make_rollout_fitness,
                    ppo_train, rollout)
from .refgait import (GaitSearchConfig, GaitSearchResult, search_reference_gait,
                      shipped_gait_path)
from . import analysis

__version__ = "0.1.0"

__all__ = [
    "ChainTables", "FramePositions", "LinkParams", "RobotParams",
    "forward_kinematics",
    "Dynamics", "DivergenceError", "ExternalForce", "HybridState",
    "ImpactError", "IntegratorConfig", "SimulationError",
    "JointBounds", "PhaseConfig", "bezier_derivative", "bezier_eval",
    "expand_free_params", "extract_free_params", "load_gait_json",
    "save_gait_json",
    "PDGains", "pd_torque",
    "ConstantGaitPolicy", "Observation", "ObsWindow", "PolicyParams",
    "policy_output_bounds", "warm_start_policy",
    "EpisodeConfig", "EsConfig", "PpoConfig", "RolloutLog", "RolloutResult",
    "WalkingEnv", "es_train", "make_rollout_fitness", "ppo_train", "rollout",
    "GaitSearchConfig", "GaitSearchResult", "search_reference_gait",
    "shipped_gait_path",
    "analysis",
]
