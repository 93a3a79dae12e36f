"""Uncertainty-gated graph refinement of face-to-tracklet similarities.

The public entry point is :func:`run_inference`; see :mod:`ugg.cli` for the
command-line front end.
"""
from .core import (PRESETS, GateMode, Graph, InvalidConfig, Labels, NeighborhoodPolicy,
                   ProblemInstance, UggConfig, UggError, UpdateSemantics, ValidationError,
                   build_graph, validate_instance)
from .inference import BeliefState, run_inference

__all__ = [
    "PRESETS", "BeliefState", "GateMode", "Graph", "InvalidConfig", "Labels",
    "NeighborhoodPolicy", "ProblemInstance", "UggConfig", "UggError", "UpdateSemantics",
    "ValidationError", "build_graph", "run_inference", "validate_instance",
]
__version__ = "0.1.0"
