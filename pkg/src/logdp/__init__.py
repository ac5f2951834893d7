"""Semi-supervised log anomaly detection from dependency and proximity patterns."""

__version__ = "0.1.0"
