"""Exact age-of-information distributions for multi-source M/M/1 systems.

The per-source AoI of a single-server queue fed by independent Poisson
sources is obtained as the absorption law of a Markov fluid queue whose
blocks are built from a small observer chain.  Three service policies are
covered: single-buffer FCFS with one slot per source (FSFS), its
earliest-served variant (ESFS) and a shared single-buffer replacement
policy (SBR).  A numba discrete-event simulator serves as the oracle.
"""
from .core import MembershipError, Policy, SourceParams, StateSpace, Tag
from .distribution import AggregateMetrics, AoiDistribution, aggregate_metrics, analyze, default_grid
from .expm import expm_left_action, expm_left_action_grid
from .mfq import (
    MfqModel,
    ModelConstructionError,
    ModelValidationError,
    build_all,
    build_mfq,
    enumerate_phase_states,
    state_count,
    validate_mfq,
)
from .observer import NumericalError, ObserverChain, build_observer_generator, solve_observer, stationary_distribution
from .simulator import SimConfig, SimResult, replicate, simulate

__all__ = [
    "AggregateMetrics", "AoiDistribution", "MembershipError", "MfqModel", "ModelConstructionError",
    "ModelValidationError", "NumericalError", "ObserverChain", "Policy", "SimConfig", "SimResult",
    "SourceParams", "StateSpace", "Tag", "aggregate_metrics", "analyze", "build_all", "build_mfq",
    "build_observer_generator", "default_grid", "enumerate_phase_states", "expm_left_action",
    "expm_left_action_grid", "replicate", "simulate", "solve_observer", "state_count",
    "stationary_distribution", "validate_mfq",
]
