"""Quantify, model and audit small-sample underprediction in ML predictions."""

__version__ = "0.1.0"
