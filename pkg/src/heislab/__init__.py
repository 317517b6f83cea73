"""Numerical laboratory for logarithmic Sobolev inequalities on the
Heisenberg group and on step-two Carnot groups."""

__version__ = "0.1.0"
