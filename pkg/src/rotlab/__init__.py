"""Simulation and analysis of delayed-measurement cheating in a quantum Rabin OT protocol."""

__version__ = "0.1.0"
