"""State dynamics, stationarity checks, and the unit-variance identification solver.

The state process is a first-order vector autoregression

    x[t+1] = A x[t] + eps[t],    eps[t] ~ N(0, Sigma),  Sigma diagonal,

identified by constraining the stationary covariance Gamma (the solution of
Gamma = A Gamma A' + Sigma) to have unit diagonal.  Under that constraint the
innovation variances are a pure function of A, so re-solving whenever A
changes keeps every candidate model on the same state scale.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IdentificationError,
    InfeasibleDynamicsError,
    InvalidInputError,
    StationarityError,
)

# Candidate transition matrices with spectral radius at or above this value
# are rejected during estimation: it keeps (I - A (x) A) well conditioned.
ESTIMATION_RHO_MAX = 0.98

# Residual tolerance for the fixed point Gamma = A Gamma A' + Sigma.
IDENTIFICATION_TOL = 1e-10


def _as_square_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("transition matrix contains non-finite entries")
    return A


def spectral_radius(A) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    A = _as_square_matrix(A)
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def spectral_radius_ok(A, margin: float = 0.0) -> bool:
    """True iff the spectral radius of ``A`` is strictly below ``1 - margin``."""
    return spectral_radius(A) < 1.0 - margin


def stationary_covariance(A, sigma) -> np.ndarray:
    """Solve the discrete Lyapunov equation Gamma = A Gamma A' + Sigma.

    Uses the vectorized form vec(Gamma) = (I - A (x) A)^{-1} vec(Sigma); the
    result is symmetrized to remove round-off asymmetry.
    """
    A = _as_square_matrix(A)
    p = A.shape[0]
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (p, p):
        raise InvalidInputError(f"sigma must be {p}x{p}, got {sigma.shape}")
    lhs = np.eye(p * p) - np.kron(A, A)
    try:
        vec_gamma = np.linalg.solve(lhs, sigma.reshape(p * p))
    except np.linalg.LinAlgError as exc:
        raise StationarityError(f"(I - A kron A) is singular: {exc}") from exc
    gamma = vec_gamma.reshape(p, p)
    return 0.5 * (gamma + gamma.T)


def _identification_system(A: np.ndarray):
    """Dense linear system over the p(p+1)/2 unknowns {gamma_ij, i<j} + {sigma_i}.

    Rows are the distinct entries of Gamma - A Gamma A' - Sigma = 0 with
    diag(Gamma) fixed at 1 and Sigma diagonal.
    """
    p = A.shape[0]
    pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
    m = len(pairs)
    n = m + p
    M = np.zeros((n, n))
    rhs = np.zeros(n)
    # off-diagonal rows: gamma_ij - sum_{a<b} (A_ia A_jb + A_ib A_ja) gamma_ab = sum_k A_ik A_jk
    for r, (i, j) in enumerate(pairs):
        M[r, r] += 1.0
        for c, (a, b) in enumerate(pairs):
            M[r, c] -= A[i, a] * A[j, b] + A[i, b] * A[j, a]
        rhs[r] = np.dot(A[i], A[j])
    # diagonal rows: sigma_i + 2 sum_{a<b} A_ia A_ib gamma_ab = 1 - sum_k A_ik^2
    for i in range(p):
        r = m + i
        M[r, r] = 1.0
        for c, (a, b) in enumerate(pairs):
            M[r, c] = 2.0 * A[i, a] * A[i, b]
        rhs[r] = 1.0 - np.dot(A[i], A[i])
    return M, rhs, pairs


def solve_identification(A) -> tuple[np.ndarray, np.ndarray]:
    """Innovation variances and stationary covariance implied by ``A``.

    Returns ``(sigma_diag, gamma)`` solving Gamma = A Gamma A' + diag(sigma_diag)
    with diag(Gamma) = 1.  Raises :class:`InfeasibleDynamicsError` when the
    unique solution has a non-positive innovation variance; callers must then
    reject the candidate ``A`` rather than clip.
    """
    A = _as_square_matrix(A)
    if not spectral_radius_ok(A, 0.0):
        raise StationarityError("transition matrix is not stationary (spectral radius >= 1)")
    p = A.shape[0]
    M, rhs, pairs = _identification_system(A)
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise IdentificationError(f"identification system is singular: {exc}") from exc
    gamma = np.eye(p)
    for c, (a, b) in enumerate(pairs):
        gamma[a, b] = gamma[b, a] = sol[c]
    sigma_diag = sol[len(pairs):].copy()
    if np.any(sigma_diag <= 0.0):
        raise InfeasibleDynamicsError(
            f"identification gives non-positive innovation variance: {sigma_diag}"
        )
    residual = gamma - A @ gamma @ A.T - np.diag(sigma_diag)
    if np.max(np.abs(residual)) > 1e-8:
        raise IdentificationError("identification residual exceeds tolerance")
    return sigma_diag, gamma


@dataclass(frozen=True)
class DynamicsSpec:
    """State transition matrix with its derived identification quantities.

    ``sigma_diag`` and ``gamma`` are always the identification solution for
    ``A``; construct through :meth:`from_transition` to guarantee that.
    """

    A: np.ndarray
    sigma_diag: np.ndarray
    gamma: np.ndarray
    p: int = field(init=False)

    def __post_init__(self):
        A = _as_square_matrix(self.A)
        p = A.shape[0]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "p", p)
        sigma_diag = np.asarray(self.sigma_diag, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        if sigma_diag.shape != (p,):
            raise InvalidInputError(f"sigma_diag must have length {p}")
        if gamma.shape != (p, p):
            raise InvalidInputError(f"gamma must be {p}x{p}")
        if np.any(sigma_diag <= 0.0):
            raise InvalidInputError("sigma_diag entries must be positive")
        if np.max(np.abs(np.diag(gamma) - 1.0)) > 1e-8:
            raise InvalidInputError("gamma must have unit diagonal")
        if not spectral_radius_ok(A, 0.0):
            raise StationarityError("transition matrix is not stationary")
        object.__setattr__(self, "sigma_diag", sigma_diag)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def from_transition(cls, A) -> "DynamicsSpec":
        """Build a spec from ``A`` alone, solving the identification constraint."""
        A = _as_square_matrix(A)
        sigma_diag, gamma = solve_identification(A)
        return cls(A=A, sigma_diag=sigma_diag, gamma=gamma)

    @property
    def sigma(self) -> np.ndarray:
        """Innovation covariance as a full (diagonal) matrix."""
        return np.diag(self.sigma_diag)
