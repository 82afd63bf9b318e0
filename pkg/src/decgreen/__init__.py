"""Green's-function PDE solvers with a low-rank factorized kernel."""

__version__ = "0.1.0"
