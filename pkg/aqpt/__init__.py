"""
Simulation library and CLI for Bayesian adaptive quantum process tomography of
single-qubit channels.
"""

__version__ = "0.1.0"
