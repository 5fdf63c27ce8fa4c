"""Quantile now- and forecasting from economic and text-derived predictors."""

__version__ = "0.1.0"
