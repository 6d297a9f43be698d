"""Scalable spatial regression: OLS, exact and nearest-neighbour GP Kriging, and an MLP baseline."""

__version__ = "0.1.0"
