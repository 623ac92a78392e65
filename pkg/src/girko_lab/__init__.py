"""Numerical laboratory for Hermitized resolvents of non-Hermitian i.i.d. matrices."""

__version__ = "0.1.0"
