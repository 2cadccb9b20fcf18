"""Policy-gradient training: estimator, baselines, oracles, imitation, self-play."""

from .baselines import (BaselineSolve, BaselineState, OnlineBaseline,
                        estimator_moments, optimal_baselines_per_coordinate,
                        solve_normal_equations, solve_optimal_baseline)
from .estimator import GradientEstimate, estimate_gradient, update_online_baseline
from .rollout import EpisodeResult, ExpertDriver, PlannerSettings, plan_for, run_episode
from .safety import (SafetyDiagnostics, compute_safety_diagnostics, safety_bound,
                     two_point_variance)
from .toyenv import ToyEnv
from .traces import EpisodeStep, EpisodeTrace

__all__ = [
    "BaselineSolve", "BaselineState", "OnlineBaseline", "estimator_moments",
    "optimal_baselines_per_coordinate", "solve_normal_equations",
    "solve_optimal_baseline", "GradientEstimate", "estimate_gradient",
    "update_online_baseline", "EpisodeResult", "ExpertDriver", "PlannerSettings",
    "plan_for", "run_episode", "SafetyDiagnostics", "compute_safety_diagnostics",
    "safety_bound", "two_point_variance", "ToyEnv", "EpisodeStep", "EpisodeTrace",
]
