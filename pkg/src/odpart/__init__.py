"""O-D demand estimation with community partitioning."""

__version__ = "0.1.0"
