"""Numerical thresholds in one place.

Degeneracy cut-offs sit at roughly sqrt(machine epsilon) scale or below;
the analysis thresholds were fixed from pilot runs of the gradient study.
"""

# vector/column collapse in Gram-Schmidt style maps
DEGENERATE_NORM = 1e-12

# lambda_min(M M^T) below this is treated as an exact zero, so psi(M) = inf
PSI_ZERO_EIGENVALUE = 1e-14

# singular-value gap below which an SVD Jacobian is flagged near_degenerate
SVD_NEAR_DEGENERATE_GAP = 1e-6
# below this gap the K-matrix route is numerically meaningless; use finite differences
SVD_ANALYTIC_MIN_GAP = 1e-10

# Jacobi eigen-solver
JACOBI_MAX_SWEEPS = 60
JACOBI_REL_TOL = 1e-15

# finite-difference oracle
FD_STEP = 1e-6

# rotation validity checks
ORTHONORMAL_TOL = 1e-6
UNIT_AXIS_TOL = 1e-12

# gradient-study thresholds (pilot-run calibrated)
SIGN_DISAGREEMENT_MIN = 0.01
OUTLIER_RATIO_MIN = 10.0
EIGEN_ZERO_TOL = 1e-12
EIGEN_HARD_CEILING = 1e-6
