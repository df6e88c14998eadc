"""Gaussian priors over attacker parameters: log-densities and truth sampling.

The defender centers independent unit-covariance Gaussians on its best guess
of each attacker parameter. Experiment harnesses also sample "true" attackers
from these priors; PD matrices are sampled in factor space so every draw is
exactly positive definite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .attackers import (
    BoxAttacker,
    LinearAttacker,
    LogisticModel,
    MLPModel,
    ModelBelief,
    logits,
    model_input_dim,
    model_num_classes,
)
from .core_math import as_matrix, as_vector, pd_from_factor

__all__ = [
    "BoxPrior",
    "LinearPrior",
    "SampleConfig",
    "box_sampling_prior",
    "build_box_prior",
    "linear_prior_for_model",
    "prior_logdensity_box",
    "prior_logdensity_linear",
    "sample_box_attacker",
    "sample_linear_attacker",
]


@dataclass(frozen=True)
class LinearPrior:
    """Prior means for the repulsive attacker; covariances are fixed to identity."""

    muM: np.ndarray
    muC: np.ndarray
    muW: np.ndarray

    def __post_init__(self):
        muM = as_matrix(self.muM, "muM")
        muC = as_matrix(self.muC, "muC")
        muW = as_matrix(self.muW, "muW")
        q, d = muM.shape
        if muC.shape != (d, d):
            raise ValueError(f"muC must be {d}x{d}, got {muC.shape}")
        if muW.shape != (q, q):
            raise ValueError(f"muW must be {q}x{q}, got {muW.shape}")
        object.__setattr__(self, "muM", muM)
        object.__setattr__(self, "muC", muC)
        object.__setattr__(self, "muW", muW)


def linear_prior_for_model(model_matrix) -> LinearPrior:
    """Prior centered on the defender's own model, identity constraint and loss metrics."""
    M = as_matrix(model_matrix, "model_matrix")
    q, d = M.shape
    return LinearPrior(muM=M, muC=np.eye(d), muW=np.eye(q))


@dataclass(frozen=True)
class BoxPrior:
    """Prior means for attractive attackers.

    muZ is the one-hot label surrogate for the target class; muC1/muC2 are the
    constant vectors at the observed attack's componentwise min and max.
    """

    muM: ModelBelief
    muC1: np.ndarray
    muC2: np.ndarray
    muZ: np.ndarray

    def __post_init__(self):
        muC1 = as_vector(self.muC1, "muC1")
        muC2 = as_vector(self.muC2, "muC2")
        muZ = as_vector(self.muZ, "muZ")
        d = model_input_dim(self.muM)
        q = model_num_classes(self.muM)
        if muC1.size != d or muC2.size != d:
            raise ValueError(f"box means must have length {d}")
        if np.any(muC1 > muC2):
            raise ValueError("muC1 must be <= muC2 componentwise")
        if muZ.size != q:
            raise ValueError(f"muZ must have length {q}")
        hot = np.flatnonzero(muZ == 1.0)
        if hot.size != 1 or np.any(muZ[np.arange(q) != hot[0]] != 0.0):
            raise ValueError("muZ must be one-hot")
        object.__setattr__(self, "muC1", muC1)
        object.__setattr__(self, "muC2", muC2)
        object.__setattr__(self, "muZ", muZ)


@dataclass(frozen=True)
class SampleConfig:
    """Scale (std-dev multiplier) and seed for sampling true attackers."""

    scale: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")


def _rng(seed: int) -> np.random.Generator:
    # Counter-based generator: distinct seeds give independent, reproducible streams.
    return np.random.Generator(np.random.Philox(seed))


def build_box_prior(alpha_obs, model_star: ModelBelief, x) -> BoxPrior:
    """Center the box prior on the observed attack and the attacked prediction.

    muC1/muC2 are min(alpha_obs) and max(alpha_obs) broadcast over coordinates;
    muZ is one-hot at the class predicted for x + alpha_obs.
    """
    alpha = as_vector(alpha_obs, "alpha_obs")
    vec = as_vector(x, "x")
    d = model_input_dim(model_star)
    if alpha.size != d or vec.size != d:
        raise ValueError(f"alpha_obs and x must have length {d}")
    q = model_num_classes(model_star)
    mu_c1 = np.full(d, alpha.min())
    mu_c2 = np.full(d, alpha.max())
    attacked_class = int(np.argmax(logits(model_star, vec + alpha)))
    mu_z = np.zeros(q)
    mu_z[attacked_class] = 1.0
    return BoxPrior(muM=model_star, muC1=mu_c1, muC2=mu_c2, muZ=mu_z)


def box_sampling_prior(model_star: ModelBelief) -> BoxPrior:
    """Placeholder prior used only to sample true attackers, before any attack
    is observed: the box/label means are not meaningful yet."""
    d = model_input_dim(model_star)
    q = model_num_classes(model_star)
    hot = np.zeros(q)
    hot[0] = 1.0
    return BoxPrior(muM=model_star, muC1=np.zeros(d), muC2=np.zeros(d), muZ=hot)


_LOG_2PI = math.log(2.0 * math.pi)


def prior_logdensity_linear(M, Cmat, Wmat, prior: LinearPrior) -> float:
    """Joint log prior of (M, C, W): quadratic in Frobenius deviations.

    Equals the sum of the three unit-covariance matrix-normal log densities;
    the additive constant is -(qd + d^2 + q^2)/2 * log(2 pi).
    """
    M = as_matrix(M, "M")
    C = as_matrix(Cmat, "Cmat")
    W = as_matrix(Wmat, "Wmat")
    if M.shape != prior.muM.shape or C.shape != prior.muC.shape or W.shape != prior.muW.shape:
        raise ValueError("parameter shapes do not match prior means")
    q, d = M.shape
    const = -0.5 * (q * d + d * d + q * q) * _LOG_2PI
    dev = (np.sum((M - prior.muM) ** 2)
           + np.sum((C - prior.muC) ** 2)
           + np.sum((W - prior.muW) ** 2))
    return const - 0.5 * float(dev)


def _model_layers(model: ModelBelief) -> Tuple[np.ndarray, ...]:
    if isinstance(model, LogisticModel):
        return (model.M,)
    return model.layers


def prior_logdensity_box(model: ModelBelief, c1, c2, z, prior: BoxPrior) -> float:
    """Joint log prior of (model weights, c1, c2, z); the model term sums
    squared Frobenius deviations over layers."""
    c1 = as_vector(c1, "c1")
    c2 = as_vector(c2, "c2")
    z = as_vector(z, "z")
    layers = _model_layers(model)
    mu_layers = _model_layers(prior.muM)
    if len(layers) != len(mu_layers):
        raise ValueError("model layer count does not match prior")
    dev = 0.0
    n_params = 0
    for W, muW in zip(layers, mu_layers):
        if W.shape != muW.shape:
            raise ValueError(f"layer shape {W.shape} does not match prior {muW.shape}")
        dev += np.sum((W - muW) ** 2)
        n_params += W.size
    if c1.size != prior.muC1.size or c2.size != prior.muC2.size or z.size != prior.muZ.size:
        raise ValueError("vector shapes do not match prior means")
    dev += np.sum((c1 - prior.muC1) ** 2)
    dev += np.sum((c2 - prior.muC2) ** 2)
    dev += np.sum((z - prior.muZ) ** 2)
    n_params += c1.size + c2.size + z.size
    return -0.5 * n_params * _LOG_2PI - 0.5 * float(dev)


def sample_linear_attacker(prior: LinearPrior, cfg: SampleConfig) -> LinearAttacker:
    """Draw a true repulsive attacker near the prior mode.

    The model matrix gets entrywise Gaussian noise. C and W are sampled in
    factor space (Cholesky of the mean plus Gaussian noise) so the draws stay
    exactly positive definite. The radius is |1 + scale * N(0,1)| floored at
    0.1. Draw order is fixed: M, G, V, c.
    """
    rng = _rng(cfg.seed)
    q, d = prior.muM.shape
    M = prior.muM + cfg.scale * rng.standard_normal((q, d))
    G = np.linalg.cholesky(prior.muC).T + cfg.scale * rng.standard_normal((d, d))
    V = np.linalg.cholesky(prior.muW).T + cfg.scale * rng.standard_normal((q, q))
    c = max(0.1, abs(1.0 + cfg.scale * rng.standard_normal()))
    return LinearAttacker(M=M, Cmat=pd_from_factor(G), c=c, Wmat=pd_from_factor(V))


def _sample_model(model: ModelBelief, scale: float, rng: np.random.Generator) -> ModelBelief:
    if isinstance(model, LogisticModel):
        return LogisticModel(M=model.M + scale * rng.standard_normal(model.M.shape))
    layers = tuple(W + scale * rng.standard_normal(W.shape) for W in model.layers)
    return MLPModel(layers=layers, activations=model.activations)


def sample_box_attacker(prior: BoxPrior, base_box: Tuple[np.ndarray, np.ndarray],
                        cfg: SampleConfig) -> BoxAttacker:
    """Draw a true attractive attacker: noisy model weights, noisy box bounds
    reordered componentwise for feasibility, uniform target class.

    Draw order is fixed: model layers, c1, c2, target.
    """
    lo = as_vector(base_box[0], "base_box lower")
    hi = as_vector(base_box[1], "base_box upper")
    if np.any(lo > hi):
        raise ValueError("base box is empty")
    rng = _rng(cfg.seed)
    model = _sample_model(prior.muM, cfg.scale, rng)
    c1 = lo + cfg.scale * rng.standard_normal(lo.size)
    c2 = hi + cfg.scale * rng.standard_normal(hi.size)
    c1, c2 = np.minimum(c1, c2), np.maximum(c1, c2)
    q = model_num_classes(model)
    target = int(rng.integers(0, q))
    return BoxAttacker(model=model, c1=c1, c2=c2, target=target)
