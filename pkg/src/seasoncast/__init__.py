"""Seasonal precipitation forecasting with from-scratch tree ensembles,
recurrent/convolutional networks and Shapley attributions."""

__version__ = "0.1.0"
