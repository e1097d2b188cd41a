"""Policy optimization and simulation for a two-client entanglement switch."""

from ._kernels import BACKEND
from .mdp import Distill, ModelParams, Swap, SwitchModel, SwitchState, Wait, build_model
from .planner import PlannerConfig, Policy, policy_iteration, value_iteration
from .simulator import MetricsReport, SimConfig, simulate

__all__ = [
    "BACKEND",
    "Distill",
    "MetricsReport",
    "ModelParams",
    "PlannerConfig",
    "Policy",
    "SimConfig",
    "SwitchModel",
    "SwitchState",
    "Swap",
    "Wait",
    "build_model",
    "policy_iteration",
    "simulate",
    "value_iteration",
]
