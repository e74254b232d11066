"""Polynomial template invariants for one-loop programs via sum-of-squares."""

from .poly import Polynomial, monomial_basis

__version__ = "0.1.0"

__all__ = ["Polynomial", "monomial_basis", "__version__"]
