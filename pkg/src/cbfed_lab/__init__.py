"""Pseudo-spectral simulation and verification lab for damped/pumped
Navier-Stokes flows (convective Brinkman-Forchheimer type) on a periodic torus.
"""

__version__ = "0.1.0"
