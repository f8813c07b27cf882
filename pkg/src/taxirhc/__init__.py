"""Receding-horizon taxi dispatch: demand estimation, LP dispatch and fleet simulation."""

__version__ = "0.1.0"
