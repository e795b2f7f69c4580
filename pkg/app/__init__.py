"""Stefan problem with a dynamic boundary condition via the Cahn-Hilliard approximation chain."""

__version__ = "0.1.0"
