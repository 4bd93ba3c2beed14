"""rvkat: gene-level rare-variant association tests with annotation/omics kernels."""

__version__ = "0.1.0"
