"""partkrige: covariate-partitioned nonstationary kriging."""

__version__ = "0.1.0"
