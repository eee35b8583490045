"""Multi-period AC OPF on a pattern-based NLP stack with a condensed-space interior-point solver."""

__version__ = "0.1.0"
