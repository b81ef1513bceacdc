"""
Settings module for Sectoria
Numerical tolerances, default sampling sizes and environment knobs
"""

import os

# Version recorded in every run manifest
VERSION = "0.3.0"

# Singular values below RANK_TOL * (largest) count as zero
RANK_TOL = 1e-10

# Relative Frobenius tolerance for operator equality
OPERATOR_TOL = 1e-10

# Two-shift resolvent cross-check
SHIFT_TOL = 1e-9

# Relative Hermitian defect of G A below which the spectral propagator is used
SELF_ADJOINT_TOL = 1e-10

# Bisection accuracy of the sector vertex
VERTEX_TOL = 1e-10

# Largest tan(theta) still reported as finite
MAX_TAN_THETA = 1e8

# Margin kept away from the boundary of the holomorphy sector
SECTOR_MARGIN = 1e-6

# Condition estimates above this are logged
COND_WARN = 1e12

# Davies-Gaffney harness
GAFFNEY_SLACK = 1.25

# Allowed non-monotone ripple in convergence sweeps
RIPPLE = 0.05

# Distance to the interior Dirichlet spectrum below which a DtN shift is refused
LAMBDA_GUARD = 1e-8

DEFAULT_SAMPLES = 1000
DEFAULT_SEED = 20240229
DEFAULT_N_MAX = 1024

# Times at which the Markov suite samples the semigroup
MARKOV_TIMES = (0.01, 0.1, 1.0)


def threads() -> int:
    """Worker cap for time-grid evaluation, from SECTORIA_THREADS (default 1)."""
    raw = os.environ.get("SECTORIA_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(1, value)
