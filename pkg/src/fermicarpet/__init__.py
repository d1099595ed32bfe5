"""Density carpets of Fermi gases released into a hard-wall box.

Ideal-gas spectral evolution, structure tracking, two-component
time-dependent Hartree-Fock and first-order coherence analysis.
"""
from .core import L, TREV, V0, SpaceGrid, SubBox, Harmonic, SubBox3D, BoxBox, HarmBox, HarmHarm
from .errors import (
    CarpetError,
    DomainError,
    ValidationError,
    NumericError,
    ResourceError,
    PropagationDiverged,
    NotEquilibratedError,
    InsufficientDataError,
)

__version__ = "0.1.0"
