"""NUTS and HMC on scale-block Gaussian targets: exact and leapfrog flows,
U-turn diagnostics, orbit construction, and the experiment suite."""

from .flows import EXACT, LEAPFROG, Flow
from .gaussmodel import PhasePoint, ScaleBlockTarget, ShellSpec, make_target
from .nuts import NUTSKernel, OrbitParams, nuts_transition

__version__ = "0.1.0"

__all__ = [
    "EXACT",
    "LEAPFROG",
    "Flow",
    "PhasePoint",
    "ScaleBlockTarget",
    "ShellSpec",
    "make_target",
    "NUTSKernel",
    "OrbitParams",
    "nuts_transition",
]
