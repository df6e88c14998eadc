"""Dense small-matrix linear algebra, Mahalanobis geometry, and Gaussian log-densities.

Everything operates on float64 numpy arrays. Positive-definite matrices travel
together with a square-root factor (:class:`PDMatrix`) so optimizers can work in
factor space and stay inside the PD cone without projections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Ridge added to factor products; keeps iterates strictly positive definite.
EPS_PD = 1e-8

__all__ = [
    "EPS_PD",
    "PDMatrix",
    "SpectralTop",
    "as_matrix",
    "as_vector",
    "canonical_sign",
    "complete_orthonormal",
    "gaussian_logpdf",
    "mahalanobis_norm",
    "matrix_normal_logpdf",
    "pd_from_factor",
    "pd_from_product",
    "pd_identity",
    "top_right_singular",
]


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float64 1-d array of length >= 1."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a 1-d array with at least one entry, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-d array with rows, cols >= 1."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PDMatrix:
    """A positive-definite matrix stored with a square-root factor.

    ``product`` is the PD matrix itself; ``factor`` is a square root in the
    sense ``factor.T @ factor ~= product``. Built through :func:`pd_from_factor`
    (which adds the EPS_PD ridge), :func:`pd_from_product` (exact product,
    Cholesky factor), or :func:`pd_identity`.
    """

    dim: int
    factor: np.ndarray
    product: np.ndarray


def pd_from_factor(factor) -> PDMatrix:
    """Build a PDMatrix as ``factor.T @ factor + EPS_PD * I``.

    The ridge keeps the product strictly positive definite even for singular
    factors, so gradient iterates parameterized by their factor never leave
    the PD cone.
    """
    G = as_matrix(factor, "factor")
    if G.shape[0] != G.shape[1]:
        raise ValueError(f"factor must be square, got shape {G.shape}")
    d = G.shape[0]
    product = G.T @ G + EPS_PD * np.eye(d)
    product = 0.5 * (product + product.T)
    return PDMatrix(dim=d, factor=_frozen(G.copy()), product=_frozen(product))


def pd_from_product(product) -> PDMatrix:
    """Build a PDMatrix from an exact symmetric PD product; factor = Cholesky.

    No ridge is added: the stored product is the given matrix bit for bit.
    Raises if the matrix is not symmetric or not positive definite beyond
    the EPS_PD floor.
    """
    P = as_matrix(product, "product")
    if P.shape[0] != P.shape[1]:
        raise ValueError(f"product must be square, got shape {P.shape}")
    scale = max(1.0, float(np.abs(P).max()))
    if np.abs(P - P.T).max() > 1e-10 * scale:
        raise ValueError("product is not symmetric within 1e-10 relative tolerance")
    P = 0.5 * (P + P.T)
    lam_min = float(np.linalg.eigvalsh(P)[0])
    if lam_min < EPS_PD * (1.0 - 1e-6):
        raise ValueError(f"product is not positive definite beyond the {EPS_PD} floor "
                         f"(min eigenvalue {lam_min:.3e})")
    factor = np.linalg.cholesky(P).T  # upper-triangular R with R.T @ R = P
    return PDMatrix(dim=P.shape[0], factor=_frozen(factor), product=_frozen(P))


def pd_identity(dim: int) -> PDMatrix:
    """The exact identity as a PDMatrix (no ridge)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    eye = np.eye(dim)
    return PDMatrix(dim=dim, factor=_frozen(eye), product=_frozen(eye.copy()))


def mahalanobis_norm(v, A: PDMatrix) -> float:
    """sqrt(v.T @ A.product @ v); reduces to the l2 norm for A = identity."""
    vec = as_vector(v, "v")
    if vec.size != A.dim:
        raise ValueError(f"dimension mismatch: vector has {vec.size}, metric has {A.dim}")
    q = float(vec @ A.product @ vec)
    return math.sqrt(max(q, 0.0))


def canonical_sign(v: np.ndarray) -> np.ndarray:
    """Flip sign so the largest-magnitude entry (lowest index on ties) is >= 0."""
    idx = int(np.argmax(np.abs(v)))
    return -v if v[idx] < 0 else v.copy()


@dataclass(frozen=True)
class SpectralTop:
    """Top singular value sigma1, unit right singular vector s1 (canonical sign),
    and the spectral gap sigma1 - sigma2."""

    sigma1: float
    s1: np.ndarray
    gap: float


def top_right_singular(A) -> SpectralTop:
    """Top right singular pair of a (possibly rectangular) matrix.

    When the gap is tiny the returned s1 is still whatever the decomposition
    produced; callers that rely on uniqueness should inspect ``gap``.
    """
    arr = as_matrix(A, "A")
    _, svals, Vh = np.linalg.svd(arr, full_matrices=False)
    sigma1 = float(svals[0])
    sigma2 = float(svals[1]) if svals.size > 1 else 0.0
    s1 = canonical_sign(Vh[0])
    return SpectralTop(sigma1=sigma1, s1=_frozen(s1), gap=sigma1 - sigma2)


def complete_orthonormal(u) -> np.ndarray:
    """Square orthogonal matrix whose first column is the given unit vector.

    Gram-Schmidt against standard basis vectors, skipping candidates nearly
    parallel to u (|dot| > 0.9) and any candidate whose residual collapses.
    A second orthogonalization pass keeps Q.T @ Q within 1e-10 of identity.
    """
    vec = as_vector(u, "u")
    nrm = float(np.linalg.norm(vec))
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError(f"u must be a unit vector (norm {nrm:.6e})")
    n = vec.size
    cols = [vec / nrm]
    for i in range(n):
        if len(cols) == n:
            break
        e = np.zeros(n)
        e[i] = 1.0
        if abs(vec[i]) > 0.9:
            continue
        cand = e
        for _ in range(2):  # re-orthogonalize for 1e-10-level orthogonality
            for col in cols:
                cand = cand - (col @ cand) * col
        res = float(np.linalg.norm(cand))
        if res < 1e-6:
            continue
        cols.append(cand / res)
    if len(cols) != n:  # unreachable for unit u, kept as a guard
        raise ValueError("failed to complete an orthonormal basis")
    return np.column_stack(cols)


def _logdet_pd(A: PDMatrix) -> float:
    sign, logdet = np.linalg.slogdet(A.product)
    if sign <= 0:
        raise ValueError("covariance is not positive definite")
    return float(logdet)


def matrix_normal_logpdf(X, mean, row_cov: PDMatrix, col_cov: PDMatrix) -> float:
    """Log-density of a matrix-valued Gaussian.

    For a q x d variate with row covariance S (q x q) and column covariance
    P (d x d):

        log p(X) = -(dq/2) log(2 pi) - (d/2) log det S - (q/2) log det P
                   - 1/2 Tr[S^-1 (X - mean) P^-1 (X - mean)^T]
    """
    Xm = as_matrix(X, "X")
    Mu = as_matrix(mean, "mean")
    if Xm.shape != Mu.shape:
        raise ValueError(f"shape mismatch: X {Xm.shape} vs mean {Mu.shape}")
    q, d = Xm.shape
    if row_cov.dim != q or col_cov.dim != d:
        raise ValueError(f"covariance dims ({row_cov.dim}, {col_cov.dim}) do not match X shape {Xm.shape}")
    D = Xm - Mu
    SinvD = np.linalg.solve(row_cov.product, D)
    PinvDt = np.linalg.solve(col_cov.product, D.T)
    trace = float(np.sum(SinvD * PinvDt.T))
    return (-0.5 * d * q * math.log(2.0 * math.pi)
            - 0.5 * d * _logdet_pd(row_cov)
            - 0.5 * q * _logdet_pd(col_cov)
            - 0.5 * trace)


def gaussian_logpdf(v, mean, cov: PDMatrix) -> float:
    """Log-density of a vector-valued Gaussian with PD covariance."""
    vec = as_vector(v, "v")
    mu = as_vector(mean, "mean")
    if vec.size != mu.size:
        raise ValueError(f"shape mismatch: v has {vec.size}, mean has {mu.size}")
    if cov.dim != vec.size:
        raise ValueError(f"covariance dim {cov.dim} does not match vector length {vec.size}")
    diff = vec - mu
    quad = float(diff @ np.linalg.solve(cov.product, diff))
    return -0.5 * vec.size * math.log(2.0 * math.pi) - 0.5 * _logdet_pd(cov) - 0.5 * quad
