"""Constructive non-identifiability for the repulsive linear attacker.

Given any constraint-saturating attack, each construction fixes two of the
attacker's three parameter groups (model belief, capability, objective) and
produces the third so the attack is optimal for the resulting attacker. A
sampling-based verifier checks membership of an attack in an attacker's
arg-max set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .attackers import LinearAttacker, optimal_attack_linear
from .core_math import (
    EPS_PD,
    PDMatrix,
    as_matrix,
    as_vector,
    complete_orthonormal,
    mahalanobis_norm,
    pd_from_factor,
    pd_from_product,
)

__all__ = [
    "MembershipReport",
    "construct_capability",
    "construct_knowledge",
    "construct_objective",
    "verify_membership",
]


@dataclass(frozen=True)
class MembershipReport:
    """Outcome of checking whether an attack attains an attacker's optimum."""

    is_member: bool
    objective_at_alpha: float
    best_found_objective: float
    gap: float


def _check_saturation(alpha: np.ndarray, Cmat: PDMatrix, c: float) -> None:
    nrm = mahalanobis_norm(alpha, Cmat)
    if abs(nrm - c) > 1e-6 * max(1.0, c):
        raise ValueError(
            f"attack does not saturate the constraint: ||alpha||_C = {nrm:.9g} vs c = {c:.9g}; "
            "an interior attack is optimal for no loss metric")


def _constraint_unit(alpha: np.ndarray, Cmat: PDMatrix) -> np.ndarray:
    u = Cmat.factor @ alpha
    nrm = float(np.linalg.norm(u))
    if nrm <= 0.0:
        raise ValueError("attack must be nonzero")
    return u / nrm


def _decaying_spectrum(rows: int, cols: int) -> np.ndarray:
    # Strictly decreasing singular values 1, 1/2, 1/4, ... keep the top pair
    # separated by a gap of at least 1/2.
    sig = np.zeros((rows, cols))
    for k in range(min(rows, cols)):
        sig[k, k] = 0.5 ** k
    return sig


def construct_objective(alpha, M, Cmat: PDMatrix, c: float) -> PDMatrix:
    """Given model belief and capability, build a loss metric W making the
    attack optimal.

    A placeholder factor with the constraint-sphere image of alpha as its top
    right singular vector is pushed through G M^-1, so the factored product
    V' M G^-1 recovers the placeholder and the attack direction wins the
    spectral problem. Requires square invertible M and a saturating attack.
    """
    alpha = as_vector(alpha, "alpha")
    M = as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"M must be square for this construction, got {M.shape}")
    if M.shape[1] != Cmat.dim or alpha.size != Cmat.dim:
        raise ValueError("dimension mismatch between alpha, M, and the constraint metric")
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond >= 1e8:
        raise ValueError(f"M is not invertible enough (condition number {cond:.3e})")
    _check_saturation(alpha, Cmat, c)
    d = Cmat.dim
    u = _constraint_unit(alpha, Cmat)
    Q = complete_orthonormal(u)
    placeholder = _decaying_spectrum(d, d) @ Q.T
    V_prime = np.linalg.solve(M.T, (placeholder @ Cmat.factor).T).T  # placeholder G M^-1
    return pd_from_factor(V_prime)


def construct_capability(alpha, M, Wmat: PDMatrix) -> Tuple[PDMatrix, float]:
    """Given model belief and loss metric, build a capability (C, c) whose
    boundary is a level set of the objective, so the attack lies in the
    arg-max set (ties with every other boundary point are expected).

    C = M^T W M stored as an exact product (Cholesky factor), c = ||alpha||_C,
    which coincides with ||M alpha||_W up to rounding.
    """
    alpha = as_vector(alpha, "alpha")
    M = as_matrix(M, "M")
    if M.shape[0] != Wmat.dim:
        raise ValueError(f"M has {M.shape[0]} rows but loss metric has dim {Wmat.dim}")
    if alpha.size != M.shape[1]:
        raise ValueError(f"alpha has length {alpha.size} but M has {M.shape[1]} columns")
    product = M.T @ Wmat.product @ M
    lam_min = float(np.linalg.eigvalsh(0.5 * (product + product.T))[0])
    if lam_min < EPS_PD:
        raise ValueError(
            f"M^T W M is not positive definite (min eigenvalue {lam_min:.3e}); M is rank deficient")
    Cmat = pd_from_product(0.5 * (product + product.T))
    c = mahalanobis_norm(alpha, Cmat)
    if c <= 0.0:
        raise ValueError("attack must be nonzero")
    return Cmat, c


def construct_knowledge(alpha, Cmat: PDMatrix, c: float, Wmat: PDMatrix) -> np.ndarray:
    """Given capability and loss metric, build a model belief M making the
    attack optimal.

    Same placeholder construction as :func:`construct_objective`, adjusted
    through V^-1 on the left and G on the right.
    """
    alpha = as_vector(alpha, "alpha")
    if alpha.size != Cmat.dim:
        raise ValueError(f"alpha has length {alpha.size} but constraint metric has dim {Cmat.dim}")
    _check_saturation(alpha, Cmat, c)
    u = _constraint_unit(alpha, Cmat)
    Q = complete_orthonormal(u)
    placeholder = _decaying_spectrum(Wmat.dim, Cmat.dim) @ Q.T
    return np.linalg.solve(Wmat.factor, placeholder) @ Cmat.factor


def verify_membership(a: LinearAttacker, alpha, samples: int, tol: float,
                      seed: int = 0) -> MembershipReport:
    """Check that no feasible attack beats the given one by more than tol.

    Compares the attack's objective against the analytic optimum and
    ``samples`` random constraint-boundary points; membership means the best
    objective found exceeds the attack's by at most tol (relative to the
    attack's objective, floored at 1).
    """
    alpha = as_vector(alpha, "alpha")
    if alpha.size != a.Cmat.dim:
        raise ValueError("alpha does not match the attacker's input dimension")
    nrm = mahalanobis_norm(alpha, a.Cmat)
    if nrm > a.c * (1.0 + tol):
        raise ValueError(f"alpha is infeasible: ||alpha||_C = {nrm:.9g} exceeds c = {a.c:.9g}")

    def objective(vecs: np.ndarray) -> np.ndarray:
        img = vecs @ a.M.T
        return np.einsum("ij,jk,ik->i", img, a.Wmat.product, img)

    obj_alpha = float(objective(alpha[None, :])[0])
    best = float(objective(optimal_attack_linear(a)[None, :])[0])
    rng = np.random.Generator(np.random.Philox(seed))
    if samples > 0:
        raw = rng.standard_normal((samples, alpha.size))
        norms = np.sqrt(np.einsum("ij,jk,ik->i", raw, a.Cmat.product, raw))
        boundary = (a.c / norms)[:, None] * raw
        best = max(best, float(objective(boundary).max()))
    gap = best - obj_alpha
    return MembershipReport(
        is_member=bool(gap <= tol * max(1.0, obj_alpha)),
        objective_at_alpha=obj_alpha,
        best_found_objective=best,
        gap=gap,
    )
