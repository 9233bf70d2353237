"""Time-optimal and minimal-norm control of the 1D heat equation with a potential."""

__version__ = "0.1.0"
