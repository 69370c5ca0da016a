"""Adaptive loss alignment: a REINFORCE controller steers parametric loss
functions during training so that a held-out evaluation metric improves
directly, rather than a fixed surrogate loss."""

__version__ = "0.1.0"
