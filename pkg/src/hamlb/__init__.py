"""Certified lower bounds on ground-state energy densities of translation-invariant chains."""

from .certify import CertifiedBound, certify, verify_feasibility
from .channels import CoarseGrainChannel, symmetrized_pair_channel
from .models import HamiltonianSpec, build_model, reference_density
from .sdp import build_lti_single, build_mps_relaxation, build_ttn_relaxation, build_two_lti_eight
from .solver import ConicSolution, SolverConfig, solve
from .ttn import TreeStack, optimize_tree
from .umps import UniformMps, energy_density, optimize_ground_state

__version__ = "0.1.0"

__all__ = [
    "CertifiedBound",
    "CoarseGrainChannel",
    "ConicSolution",
    "HamiltonianSpec",
    "SolverConfig",
    "TreeStack",
    "UniformMps",
    "build_lti_single",
    "build_model",
    "build_mps_relaxation",
    "build_ttn_relaxation",
    "build_two_lti_eight",
    "certify",
    "energy_density",
    "optimize_ground_state",
    "optimize_tree",
    "reference_density",
    "solve",
    "symmetrized_pair_channel",
    "verify_feasibility",
]
