"""Random walk on the dynamical random cluster model: simulation, coupling and exact analysis."""

__version__ = "0.1.0"
