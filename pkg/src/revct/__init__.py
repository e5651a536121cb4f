"""Sparse-view fan-beam CT reconstruction with FISTA, RED and regularization by equivariance.

Submodules are imported on demand so that the command-line entry point can
fix the compiled-kernel thread pool before numba loads.
"""
__version__ = "0.1.0"
