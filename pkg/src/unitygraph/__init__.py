"""Multi-person motion prediction on a hypervariate graph."""

__version__ = "0.1.0"
