"""Fiber orientation optimization for 2D plates.

Minimum-compliance design of continuously varying tow orientations with
local manufacturing constraints: a bound on the orientation field's curl
(tow turning radius) and on its divergence (gap/overlap density), enforced
by an augmented Lagrangian (or a KS aggregate) driven by MMA steps.
"""

from .manufacturing import (Bounds, ProcessParams, bounds_from_process,
                            curl_div_fd, representability_check)
from .material import MATERIALS, OrthotropicLaw, isotropic
from .mesh import (DisconnectedDomainError, LoadCase, ProblemPreset,
                   StructuredGrid, beam_preset, build_preset,
                   cantilever_preset, lbracket_preset, tension_strip_preset)
from .optimizer import RunResult, Schedules, run

__version__ = "0.1.0"

__all__ = [
    "Bounds", "ProcessParams", "bounds_from_process", "curl_div_fd",
    "representability_check", "MATERIALS", "OrthotropicLaw", "isotropic",
    "DisconnectedDomainError", "LoadCase", "ProblemPreset", "StructuredGrid",
    "beam_preset", "build_preset", "cantilever_preset", "lbracket_preset",
    "tension_strip_preset", "RunResult", "Schedules", "run", "__version__",
]
