"""Kalman-filtered compressed sensing for time-varying sparse signals."""

__version__ = "0.1.0"
