"""Determinant bounds for fermionic covariances, with numerical verification.

Submodules
----------
grassmann
    Exterior algebra, chronological products and Grassmann Gaussian integrals.
covariance
    Lattice models, the imaginary-time covariance and its Gram representation.
detbound
    Randomized determinant-bound harness.
scales
    Frequency-scale decomposition, Gram constants and decay constants.
effaction
    Exact effective actions on tiny index sets and the convergence bound.
cli
    The ``verify`` command.
"""

__version__ = "0.1.0"
