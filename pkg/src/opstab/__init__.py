"""Stability-hardened physics-informed operator learning.

Trains DeepONet solution operators with a physics-informed loss, hardens
them by min-max (PGD) adversarial training, and measures the result
against classical finite-difference / Runge-Kutta reference solvers.
"""

__version__ = "0.1.0"
