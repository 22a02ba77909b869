"""Rainfall-runoff sequence forecasting with a from-scratch LSTM."""

__version__ = "0.1.0"
