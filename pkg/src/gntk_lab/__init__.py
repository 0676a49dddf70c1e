"""Graph neural tangent kernels, finite-width GNN training, and their equivalence."""

__version__ = "0.1.0"
