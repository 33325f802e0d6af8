"""Learned image codec with a hyperprior and a masked-convolution context model."""

__version__ = "0.1.0"
