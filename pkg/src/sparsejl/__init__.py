"""Sparse Johnson-Lindenstrauss ensembles and their extreme singular values."""

__version__ = "0.1.0"
