"""Finite-particle schemes for Hamilton-Jacobi-Bellman equations on P(T^d).

The package solves the N-particle equation on (T^d)^N with idiosyncratic and
common noise, lifts the solution back to measures, and checks the quantitative
behaviour (Lipschitz bounds, comparison, convergence in N, control and game
applications) numerically.
"""

__version__ = "0.1.0"
