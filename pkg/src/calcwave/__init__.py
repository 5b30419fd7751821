"""Finite element simulation of cytosol/ER calcium dynamics with RyR-gated interface fluxes."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
