"""Poisson grain (Boolean) models: simulation, exact cumulant machinery and limit-theory bounds."""

__version__ = "0.1.0"
