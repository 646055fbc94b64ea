"""Swarm optimizers, a Haar wavelet feature layer and a small trainable classifier
for desk-scale hyperparameter tuning experiments."""

__version__ = "0.1.0"
