"""RL toolbox for building cooling-load demand-response control."""

__version__ = "0.1.0"
