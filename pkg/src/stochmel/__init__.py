"""Numerical laboratory for energy transport in a randomly perturbed rotator-pendulum.

Modules: :mod:`noise` (stationary Gaussian paths and path diagnostics),
:mod:`model` (Hamiltonians, brackets, separatrix), :mod:`integrate`
(path-wise RK4 and Gronwall guards), :mod:`melnikov` (Melnikov processes,
manifold splitting, action change), :mod:`spectral` (moments and Rice
statistics), :mod:`cli` (reproducible experiment runs).
"""

__version__ = "0.1.0"
