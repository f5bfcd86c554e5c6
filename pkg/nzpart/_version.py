"""nzpart - Nonzero-partitioned sparse matrix-vector multiplication."""

__version__ = "0.1.0"
