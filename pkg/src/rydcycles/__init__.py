"""Predator-prey cycles in a two-component driven-dissipative Rydberg lattice."""

__version__ = "0.1.0"
