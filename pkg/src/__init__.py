"""
Graphon Chaos Laboratory Package

Numerical checks of propagation of chaos for particle systems interacting
through a graphon: closed-form Gaussian laws, particle simulation, torus
Fokker-Planck solving and the subset hierarchy.
"""

__version__ = "1.0.0"
