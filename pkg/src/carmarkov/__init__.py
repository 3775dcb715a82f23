"""Quantum Markov states on finite windows of the fermionic chain."""
__version__ = "0.1.0"
