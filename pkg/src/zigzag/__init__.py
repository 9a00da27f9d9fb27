"""Stochastic zig-zag trajectories for spin-1/2 particles in a Stern-Gerlach setup."""

from .guidance import GuidanceSample, NodeProximity, ParticleConfig, guidance_sample, jump_rate, spin_vector, velocity
from .integrator import IntegratorSettings, JumpEvent, StepFailure, TrajectoryRecord, run_batch, run_trajectory, step
from .sampling import EquilibriumSampler, sample_initial
from .scenarios import Inconclusive, ScenarioSpec, catalog, effective_collapse_check, get_scenario
from .states import (FieldProfile, GaussianFactor, NormalizationError, PacketParams, SpinorState, build_epr_state,
                     build_free_state, build_sg_state, evaluate, gradient)

__all__ = [
    "EquilibriumSampler", "FieldProfile", "GaussianFactor", "GuidanceSample", "Inconclusive", "IntegratorSettings",
    "JumpEvent", "NodeProximity", "NormalizationError", "PacketParams", "ParticleConfig", "ScenarioSpec",
    "SpinorState", "StepFailure", "TrajectoryRecord", "build_epr_state", "build_free_state", "build_sg_state",
    "catalog", "effective_collapse_check", "evaluate", "get_scenario", "gradient", "guidance_sample", "jump_rate",
    "run_batch", "run_trajectory", "sample_initial", "spin_vector", "step", "velocity",
]
