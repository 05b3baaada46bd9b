"""Statistical finite element filtering for linear elastodynamics."""

__version__ = "0.1.0"
