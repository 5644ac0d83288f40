"""Stochastic mean-field dynamics of interacting fermions on small lattices."""

__version__ = "0.1.0"

from .errors import StochMFError
from .model import ModelSpec, hubbard_chain, random_model

__all__ = ["ModelSpec", "StochMFError", "hubbard_chain", "random_model", "__version__"]
