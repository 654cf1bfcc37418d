"""Galerkin boundary elements for the Laplace equation with weakly imposed
Dirichlet and Signorini contact conditions."""

__version__ = "0.1.0"
