"""Macroscopic freeway simulation and coordinated ramp-metering control."""

__version__ = "0.1.0"
