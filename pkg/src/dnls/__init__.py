"""Numerical laboratory for the 1D NLS with a repulsive delta interaction."""
from .core import (
    DnlsError,
    DomainError,
    EvenField,
    HalfLineGrid,
    ModelParams,
    h1_gamma_quadratic,
    integrate,
    make_grid,
)
from .groundstate import GroundState, NoGroundState, ground_state

__all__ = [
    "DnlsError",
    "DomainError",
    "EvenField",
    "HalfLineGrid",
    "ModelParams",
    "GroundState",
    "NoGroundState",
    "ground_state",
    "h1_gamma_quadratic",
    "integrate",
    "make_grid",
]
__version__ = "0.1.0"
