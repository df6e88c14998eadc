"""Attacker parameterizations and their optimal attacks.

Three attacker families are supported:

* a repulsive attacker against a linear model, constrained to a Mahalanobis
  ball (closed-form optimal attack via the top singular pair);
* attractive attackers against a softmax-linear or MLP classifier, constrained
  to a box (optimal attack approximated by projected gradient ascent).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple, Union

import numpy as np

from .core_math import (
    PDMatrix,
    as_matrix,
    as_vector,
    canonical_sign,
    mahalanobis_norm,
    top_right_singular,
)

__all__ = [
    "BoxAttacker",
    "LinearAttacker",
    "LogisticModel",
    "MLPModel",
    "ModelBelief",
    "PGDConfig",
    "forward_trace",
    "logits",
    "model_input_dim",
    "model_num_classes",
    "optimal_attack_box",
    "optimal_attack_linear",
    "target_prob_grad",
]

SUPPORTED_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class LinearAttacker:
    """Repulsive attacker: believed model M, constraint metric C (radius c),
    loss metric W."""

    M: np.ndarray
    Cmat: PDMatrix
    c: float
    Wmat: PDMatrix

    def __post_init__(self):
        M = as_matrix(self.M, "M")
        object.__setattr__(self, "M", M)
        if M.shape[1] != self.Cmat.dim:
            raise ValueError(f"M has {M.shape[1]} columns but constraint metric has dim {self.Cmat.dim}")
        if M.shape[0] != self.Wmat.dim:
            raise ValueError(f"M has {M.shape[0]} rows but loss metric has dim {self.Wmat.dim}")
        if not self.c > 0:
            raise ValueError("constraint radius c must be positive")


@dataclass(frozen=True)
class LogisticModel:
    """Softmax-linear classifier belief: class probabilities softmax(M x)."""

    M: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "M", as_matrix(self.M, "M"))


@dataclass(frozen=True)
class MLPModel:
    """Multi-layer perceptron belief.

    ``layers[k]`` maps activations of width layers[k].shape[1] to width
    layers[k].shape[0]. ``activations`` holds one tag per hidden layer
    ("relu" or "tanh"); the final layer is linear and class probabilities
    are the softmax of its output, so an MLP with no hidden layers behaves
    exactly like a LogisticModel.
    """

    layers: Tuple[np.ndarray, ...]
    activations: Tuple[str, ...]

    def __post_init__(self):
        layers = tuple(as_matrix(W, f"layers[{i}]") for i, W in enumerate(self.layers))
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(layers) < 1:
            raise ValueError("MLPModel needs at least one layer")
        if len(self.activations) != len(layers) - 1:
            raise ValueError(f"expected {len(layers) - 1} hidden activation tags, got {len(self.activations)}")
        for tag in self.activations:
            if tag not in SUPPORTED_ACTIVATIONS:
                raise ValueError(f"unsupported activation {tag!r}; choose from {SUPPORTED_ACTIVATIONS}")
        for k in range(1, len(layers)):
            if layers[k].shape[1] != layers[k - 1].shape[0]:
                raise ValueError(
                    f"layer {k} expects input width {layers[k].shape[1]} "
                    f"but layer {k - 1} outputs width {layers[k - 1].shape[0]}")


ModelBelief = Union[LogisticModel, MLPModel]


def model_input_dim(model: ModelBelief) -> int:
    if isinstance(model, LogisticModel):
        return model.M.shape[1]
    return model.layers[0].shape[1]


def model_num_classes(model: ModelBelief) -> int:
    if isinstance(model, LogisticModel):
        return model.M.shape[0]
    return model.layers[-1].shape[0]


@dataclass(frozen=True)
class BoxAttacker:
    """Attractive attacker: classifier belief, box bounds c1 <= alpha <= c2,
    and a target class to push the prediction toward."""

    model: ModelBelief
    c1: np.ndarray
    c2: np.ndarray
    target: int

    def __post_init__(self):
        c1 = as_vector(self.c1, "c1")
        c2 = as_vector(self.c2, "c2")
        object.__setattr__(self, "c1", c1)
        object.__setattr__(self, "c2", c2)
        d = model_input_dim(self.model)
        if c1.size != d or c2.size != d:
            raise ValueError(f"box bounds must have length {d}")
        if np.any(c1 > c2):
            raise ValueError("empty box: c1 must be <= c2 componentwise")
        q = model_num_classes(self.model)
        if not (0 <= int(self.target) < q):
            raise ValueError(f"target class {self.target} outside 0..{q - 1}")
        object.__setattr__(self, "target", int(self.target))


@dataclass(frozen=True)
class PGDConfig:
    """Inner-solver settings for box-constrained gradient ascent.

    With ``backtracking`` on, a proposed step is accepted only if the
    objective does not decrease; the step size is halved on rejection and
    reset on acceptance.
    """

    steps: int = 300
    step_size: float = 0.05
    init: str = "zero"  # zero | midpoint | random
    seed: int = 0
    backtracking: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.init not in ("zero", "midpoint", "random"):
            raise ValueError(f"unknown init mode {self.init!r}")


def optimal_attack_linear(a: LinearAttacker) -> np.ndarray:
    """Closed-form repulsive attack.

    The objective ||M alpha||_W^2 over ||alpha||_C <= c is maximized on the
    constraint boundary along G^-1 s1, where s1 is the top right singular
    vector of V M G^-1 (V, G the stored factors of W, C). The direction is
    rescaled so the C-norm equals c exactly and the canonical sign rule is
    applied; -alpha is equally optimal since the objective is even.
    """
    G = a.Cmat.factor
    V = a.Wmat.factor
    MGinv = np.linalg.solve(G.T, a.M.T).T  # M @ G^-1
    top = top_right_singular(V @ MGinv)
    direction = np.linalg.solve(G, top.s1)
    nrm = mahalanobis_norm(direction, a.Cmat)
    alpha = (a.c / nrm) * direction
    return canonical_sign(alpha)


def _softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - np.max(s))
    return e / e.sum()


def _apply_activation(tag: str, pre: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return np.maximum(pre, 0.0)
    return np.tanh(pre)


def forward_trace(model: MLPModel, x: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Run the layer recursion, returning (pre-activations, activations).

    activations[0] is the input; activations[k+1] feeds layer k+1. The last
    pre-activation is the linear output before the softmax.
    """
    acts = [x]
    pres = []
    h = x
    for k, W in enumerate(model.layers):
        pre = W @ h
        pres.append(pre)
        if k < len(model.layers) - 1:
            h = _apply_activation(model.activations[k], pre)
            acts.append(h)
    return pres, acts


def logits(model: ModelBelief, x) -> np.ndarray:
    """Class-probability vector softmax(model output at x)."""
    vec = as_vector(x, "x")
    d = model_input_dim(model)
    if vec.size != d:
        raise ValueError(f"x has length {vec.size} but model expects {d}")
    if isinstance(model, LogisticModel):
        return _softmax(model.M @ vec)
    pres, _ = forward_trace(model, vec)
    return _softmax(pres[-1])


def target_prob_grad(model: ModelBelief, x: np.ndarray, target: int) -> Tuple[float, np.ndarray]:
    """Target-class probability and its gradient with respect to the input.

    For the softmax-linear model the gradient is the exact closed form
    z_t * M^T (e_t - z). For the MLP it is reverse-mode through the layer
    recursion; the relu subgradient at 0 is taken to be 0.
    """
    if isinstance(model, LogisticModel):
        z = _softmax(model.M @ x)
        ind = np.zeros(z.size)
        ind[target] = 1.0
        return float(z[target]), z[target] * (model.M.T @ (ind - z))
    pres, _ = forward_trace(model, x)
    z = _softmax(pres[-1])
    ind = np.zeros(z.size)
    ind[target] = 1.0
    delta = z[target] * (ind - z)  # gradient at the final linear output
    for k in range(len(model.layers) - 1, -1, -1):
        delta = model.layers[k].T @ delta
        if k > 0:
            tag = model.activations[k - 1]
            pre = pres[k - 1]
            if tag == "relu":
                delta = delta * (pre > 0.0)
            else:
                delta = delta * (1.0 - np.tanh(pre) ** 2)
    return float(z[target]), delta


def _pgd_init(c1: np.ndarray, c2: np.ndarray, cfg: PGDConfig) -> np.ndarray:
    if cfg.init == "zero":
        return np.clip(np.zeros(c1.size), c1, c2)
    if cfg.init == "midpoint":
        return 0.5 * (c1 + c2)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    return c1 + rng.random(c1.size) * (c2 - c1)


def optimal_attack_box(a: BoxAttacker, x, cfg: PGDConfig, return_trace: bool = False):
    """Projected gradient ascent on the target-class probability over the box.

    Iterates are clamped into [c1, c2] after every step (and at
    initialization), so they are always feasible; with backtracking enabled
    the objective sequence is non-decreasing. Deterministic given cfg.seed.
    """
    vec = as_vector(x, "x")
    if vec.size != a.c1.size:
        raise ValueError(f"x has length {vec.size} but box has length {a.c1.size}")
    alpha = _pgd_init(a.c1, a.c2, cfg)
    obj, grad = target_prob_grad(a.model, vec + alpha, a.target)
    trace = [obj]
    step = cfg.step_size
    for _ in range(cfg.steps):
        proposal = np.clip(alpha + step * grad, a.c1, a.c2)
        new_obj, new_grad = target_prob_grad(a.model, vec + proposal, a.target)
        if not cfg.backtracking or new_obj >= obj:
            alpha, obj, grad = proposal, new_obj, new_grad
            step = cfg.step_size
        else:
            step *= 0.5
        trace.append(obj)
    if return_trace:
        return alpha, np.asarray(trace)
    return alpha
