"""Day-ahead electricity price forecasting with features from a coupled market."""

__version__ = "0.1.0"
