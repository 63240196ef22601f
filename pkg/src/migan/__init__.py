"""Multiple imputation of blockwise-missing data with per-pattern WGAN-GP generators."""

__version__ = "0.1.0"
