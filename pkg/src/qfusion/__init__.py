"""Hybrid quantum-classical CNN with parallel amplitude/angle circuits and feature fusion."""

__version__ = "0.1.0"
