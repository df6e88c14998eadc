"""Bi-level MAP recovery of attacker parameters from a single observed attack.

The outer problem minimizes

    prior_weight * (squared deviations from the prior means)
      + || alpha_obs - alpha_opt(parameters) ||^2

where alpha_opt is the attacker's optimal attack at the current parameters.
For the linear attacker the inner problem has a closed form and the outer
gradient is computed analytically (the spectral term differentiates through
the top eigenpair of the scaled model matrix). For box attackers the inner
projected-ascent solver is either unrolled and differentiated in reverse mode
(via torch) or handled by central finite differences.

PD matrices are optimized through their square-root factors, so iterates stay
strictly positive definite without projections. The constraint radius is never
an optimization variable: a saturating attacker pins c = ||alpha_obs||_C at
the current C.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import torch

from .attackers import (
    BoxAttacker,
    LinearAttacker,
    LogisticModel,
    MLPModel,
    ModelBelief,
    PGDConfig,
    model_input_dim,
    model_num_classes,
    optimal_attack_box,
    optimal_attack_linear,
)
from .core_math import (
    EPS_PD,
    as_vector,
    mahalanobis_norm,
    pd_from_factor,
    top_right_singular,
)
from .priors import BoxPrior, LinearPrior

__all__ = [
    "InferenceConfig",
    "InferenceResult",
    "box_objective_and_grad_unrolled",
    "infer_box",
    "infer_linear",
    "outer_objective_box",
    "outer_objective_linear",
]

_CONVERGENCE_WINDOW = 50
_CONVERGENCE_TOL = 1e-10


@dataclass(frozen=True)
class InferenceConfig:
    """Outer-optimizer settings.

    grad_mode applies to box attackers: "unrolled" differentiates in reverse
    mode through the unrolled inner ascent (fixed step size, no backtracking);
    "finite_diff" uses central differences of step fd_step on every scalar
    parameter, with the inner solver exactly as configured. With
    exhaustive_classes the continuous problem is re-solved once per candidate
    target class and the lowest-objective result wins.
    """

    prior_weight: float = 0.1
    learning_rate: float = 0.01
    epochs: int = 5000
    grad_mode: str = "unrolled"  # unrolled | finite_diff
    fd_step: float = 1e-4
    inner: PGDConfig = field(default_factory=PGDConfig)
    optimizer: str = "adam"  # adam | gd
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    exhaustive_classes: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if not self.prior_weight >= 0:
            raise ValueError("prior weight must be nonnegative")
        if self.grad_mode not in ("unrolled", "finite_diff"):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class InferenceResult:
    """Recovered attacker, per-epoch objective trace, and the optimal attack
    at the recovered parameters. For box attackers z_hat carries the relaxed
    label vector behind the recovered target class."""

    estimate: Union[LinearAttacker, BoxAttacker]
    loss_trace: np.ndarray
    alpha_opt_final: np.ndarray
    converged: bool
    z_hat: Optional[np.ndarray] = None


# ---------------------------------------------------------------------------
# shared outer-descent driver


class _Adam:
    def __init__(self, shapes: Dict[str, tuple], lr: float, b1: float, b2: float, eps: float):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def _snapshot(params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def _descend(params: Dict[str, np.ndarray],
             value_and_grad: Callable[[Dict[str, np.ndarray]], Tuple[float, Dict[str, np.ndarray]]],
             value_only: Callable[[Dict[str, np.ndarray]], float],
             cfg: InferenceConfig,
             project: Optional[Callable[[Dict[str, np.ndarray]], None]] = None,
             ) -> Tuple[Dict[str, np.ndarray], float, np.ndarray, bool]:
    """Run cfg.epochs outer steps, returning the best iterate seen.

    The trace records the objective at the start of each epoch, so trace[0]
    is the value at initialization. Non-finite gradients skip the update for
    that epoch (the objective can have unbounded derivatives at spectral
    ties); gd mode backtracks by halving until the objective does not
    increase, resetting the step on acceptance.
    """
    trace = np.empty(cfg.epochs)
    best = _snapshot(params)
    best_val = np.inf
    adam = _Adam({k: v.shape for k, v in params.items()},
                 cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) \
        if cfg.optimizer == "adam" else None
    for epoch in range(cfg.epochs):
        val, grads = value_and_grad(params)
        trace[epoch] = val
        if val < best_val:
            best_val = val
            best = _snapshot(params)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            continue
        if adam is not None:
            adam.step(params, grads)
            if project is not None:
                project(params)
        else:
            step = cfg.learning_rate
            for _ in range(60):
                trial = {k: params[k] - step * grads[k] for k in params}
                if project is not None:
                    project(trial)
                if value_only(trial) <= val:
                    for k in params:
                        params[k] = trial[k]
                    break
                step *= 0.5
    final_val = value_only(params)
    if final_val < best_val:
        best_val = final_val
        best = _snapshot(params)
    tail = trace[-_CONVERGENCE_WINDOW:]
    converged = bool(trace.size >= _CONVERGENCE_WINDOW
                     and float(tail.max() - tail.min()) < _CONVERGENCE_TOL)
    return best, best_val, trace, converged


# ---------------------------------------------------------------------------
# linear attacker


def outer_objective_linear(M, G_factor, V_factor, alpha_obs, prior: LinearPrior,
                           prior_weight: float) -> float:
    """Outer objective for the linear attacker, parameterized by the factors
    of C and W.

    The radius is tied to the observation, c = ||alpha_obs||_C at the current
    C = G^T G + eps I, and the residual takes whichever of the two equally
    optimal attack signs sits closer to the observation.
    """
    alpha = as_vector(alpha_obs, "alpha_obs")
    G = np.asarray(G_factor, dtype=np.float64)
    V = np.asarray(V_factor, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    Cmat = pd_from_factor(G)
    Wmat = pd_from_factor(V)
    dev = (np.sum((M - prior.muM) ** 2)
           + np.sum((Cmat.product - prior.muC) ** 2)
           + np.sum((Wmat.product - prior.muW) ** 2))
    c = mahalanobis_norm(alpha, Cmat)
    top = top_right_singular(V @ np.linalg.solve(G.T, M.T).T)
    direction = np.linalg.solve(G, top.s1)
    a_opt = (c / mahalanobis_norm(direction, Cmat)) * direction
    residual = min(float(np.sum((alpha - a_opt) ** 2)),
                   float(np.sum((alpha + a_opt) ** 2)))
    return prior_weight * float(dev) + residual


def _linear_value_grad(params: Dict[str, np.ndarray], alpha: np.ndarray,
                       prior: LinearPrior, lam: float) -> Tuple[float, Dict[str, np.ndarray]]:
    """Objective and analytic gradients for the linear outer problem.

    The only non-routine piece is the derivative of the top right singular
    vector s1 of A = V M G^-1, obtained from the eigenproblem of B = A^T A:
    for a perturbation dB, ds1 = (sigma1^2 I - B)^+ dB s1. Near-degenerate
    gaps are floored so the gradient stays bounded (the exact derivative
    blows up at spectral ties).
    """
    M, G, V = params["M"], params["G"], params["V"]
    d = G.shape[0]
    q = V.shape[0]
    C = G.T @ G + EPS_PD * np.eye(d)
    W = V.T @ V + EPS_PD * np.eye(q)
    Ginv = np.linalg.inv(G)
    A = V @ M @ Ginv
    B = A.T @ A
    lams, U = np.linalg.eigh(B)
    s1 = U[:, -1]
    c = float(np.sqrt(alpha @ C @ alpha))
    w = Ginv @ s1
    Cw = C @ w
    n = float(np.sqrt(w @ Cw))
    a_plus = (c / n) * w
    r_minus = alpha - a_plus
    r_plus = alpha + a_plus
    R_minus = float(r_minus @ r_minus)
    R_plus = float(r_plus @ r_plus)
    sig = 1.0 if R_minus <= R_plus else -1.0
    r = r_minus if sig > 0 else r_plus
    R = min(R_minus, R_plus)

    dM = M - prior.muM
    dC = C - prior.muC
    dW = W - prior.muW
    val = lam * float(np.sum(dM ** 2) + np.sum(dC ** 2) + np.sum(dW ** 2)) + R

    k = sig * c / n
    rho = float(r @ w)
    g_c = -2.0 * rho * sig / n
    g_n = 2.0 * rho * sig * c / (n * n)
    g_w = -2.0 * k * r + (g_n / n) * Cw
    g_s1 = Ginv.T @ g_w
    gap = np.maximum(lams[-1] - lams[:-1], 1e-12 * max(1.0, lams[-1]))
    h = U[:, :-1] @ ((U[:, :-1].T @ g_s1) / gap)
    GA = A @ (np.outer(s1, h) + np.outer(h, s1))

    gM = 2.0 * lam * dM + V.T @ GA @ Ginv.T
    gV = 2.0 * lam * V @ (dW + dW.T) + GA @ (M @ Ginv).T
    gG = (2.0 * lam * G @ (dC + dC.T)
          + (g_c / c) * np.outer(G @ alpha, alpha)
          + (g_n / n) * np.outer(G @ w, w)
          - np.outer(Ginv.T @ g_w, w)
          - A.T @ GA @ Ginv.T)
    return val, {"M": gM, "G": gG, "V": gV}


def infer_linear(alpha_obs, prior: LinearPrior, cfg: InferenceConfig) -> InferenceResult:
    """Recover (M, C, W) for a repulsive linear attacker from one observed attack.

    Optimization runs over (M, G, V) with C = G^T G + eps I and W likewise,
    initialized at the prior means (Cholesky factors for the metrics). The
    returned estimate is the best-objective iterate seen.
    """
    alpha = as_vector(alpha_obs, "alpha_obs")
    if float(np.linalg.norm(alpha)) == 0.0:
        raise ValueError("degenerate observation: alpha_obs is zero")
    q, d = prior.muM.shape
    if alpha.size != d:
        raise ValueError(f"alpha_obs has length {alpha.size} but the prior model expects {d}")
    params = {
        "M": prior.muM.copy(),
        "G": np.linalg.cholesky(prior.muC).T,
        "V": np.linalg.cholesky(prior.muW).T,
    }
    lam = cfg.prior_weight
    best, _, trace, converged = _descend(
        params,
        lambda p: _linear_value_grad(p, alpha, prior, lam),
        lambda p: _linear_value_grad(p, alpha, prior, lam)[0],
        cfg,
    )
    Cmat = pd_from_factor(best["G"])
    Wmat = pd_from_factor(best["V"])
    estimate = LinearAttacker(M=best["M"], Cmat=Cmat,
                              c=mahalanobis_norm(alpha, Cmat), Wmat=Wmat)
    return InferenceResult(
        estimate=estimate,
        loss_trace=trace,
        alpha_opt_final=optimal_attack_linear(estimate),
        converged=converged,
    )


# ---------------------------------------------------------------------------
# box attackers


def _box_deviation(layers, c1, c2, z, prior: BoxPrior):
    mu_layers = prior.muM.layers if isinstance(prior.muM, MLPModel) else (prior.muM.M,)
    dev = sum(((W - muW) ** 2).sum() for W, muW in zip(layers, mu_layers))
    return (dev + ((c1 - prior.muC1) ** 2).sum()
            + ((c2 - prior.muC2) ** 2).sum()
            + ((z - prior.muZ) ** 2).sum())


def outer_objective_box(model: ModelBelief, c1, c2, z, alpha_obs, x,
                        prior: BoxPrior, prior_weight: float, inner: PGDConfig,
                        forced_target: Optional[int] = None) -> float:
    """Outer objective for box attackers: prior deviations plus the squared
    distance between the observed attack and the inner solver's attack.

    Bounds are reordered componentwise before the inner solve; the target
    class is the argmax of z unless forced_target pins it.
    """
    c1 = as_vector(c1, "c1")
    c2 = as_vector(c2, "c2")
    z = as_vector(z, "z")
    alpha = as_vector(alpha_obs, "alpha_obs")
    lo, hi = np.minimum(c1, c2), np.maximum(c1, c2)
    target = int(np.argmax(z)) if forced_target is None else int(forced_target)
    attacker = BoxAttacker(model=model, c1=lo, c2=hi, target=target)
    a_opt = optimal_attack_box(attacker, x, inner)
    layers = model.layers if isinstance(model, MLPModel) else (model.M,)
    dev = _box_deviation(layers, lo, hi, z, prior)
    return prior_weight * float(dev) + float(np.sum((alpha - a_opt) ** 2))


def _params_to_model(params: Dict[str, np.ndarray], template: ModelBelief) -> ModelBelief:
    if isinstance(template, LogisticModel):
        return LogisticModel(M=params["layer0"])
    n = len(template.layers)
    return MLPModel(layers=tuple(params[f"layer{k}"] for k in range(n)),
                    activations=template.activations)


def _unrolled_attack(layer_ts: List[torch.Tensor], activations: Tuple[str, ...],
                     x_t: torch.Tensor, lo: torch.Tensor, hi: torch.Tensor,
                     target: int, inner: PGDConfig) -> torch.Tensor:
    """Fixed-step projected ascent written as a differentiable torch graph.

    Mirrors the numpy solver with backtracking disabled, step by step: the
    two must produce identical attacks for identical settings. The ascent
    direction is the closed-form input gradient of the target probability,
    so reverse mode through this graph yields the exact unrolled gradient.
    """
    d = x_t.numel()
    q = layer_ts[-1].shape[0]
    if inner.init == "zero":
        alpha = torch.maximum(torch.minimum(torch.zeros(d, dtype=torch.float64), hi), lo)
    elif inner.init == "midpoint":
        alpha = 0.5 * (lo + hi)
    else:
        t = np.random.Generator(np.random.Philox(inner.seed)).random(d)
        alpha = lo + torch.from_numpy(t) * (hi - lo)
    e_t = torch.zeros(q, dtype=torch.float64)
    e_t[target] = 1.0
    n_layers = len(layer_ts)
    for _ in range(inner.steps):
        u = x_t + alpha
        pres = []
        h = u
        for k, Wt in enumerate(layer_ts):
            pre = Wt @ h
            pres.append(pre)
            if k < n_layers - 1:
                h = torch.relu(pre) if activations[k] == "relu" else torch.tanh(pre)
        s = pres[-1]
        e = torch.exp(s - s.max().detach())
        zz = e / e.sum()
        delta = zz[target] * (e_t - zz)
        for k in range(n_layers - 1, -1, -1):
            delta = layer_ts[k].T @ delta
            if k > 0:
                if activations[k - 1] == "relu":
                    delta = delta * (pres[k - 1] > 0.0).to(torch.float64)
                else:
                    delta = delta * (1.0 - torch.tanh(pres[k - 1]) ** 2)
        alpha = torch.maximum(torch.minimum(alpha + inner.step_size * delta, hi), lo)
    return alpha


def box_objective_and_grad_unrolled(model: ModelBelief, c1, c2, z, alpha_obs, x,
                                    prior: BoxPrior, prior_weight: float, inner: PGDConfig,
                                    forced_target: Optional[int] = None,
                                    ) -> Tuple[float, Dict[str, np.ndarray]]:
    """Value and reverse-mode gradient of the box outer objective, with the
    inner ascent unrolled (fixed step, no backtracking).

    Gradients are returned for every layer matrix, c1, c2, and z. The target
    class is piecewise constant in z, so z's gradient comes from its prior
    term only. Pass forced_target to pin the inner target class.
    """
    torch.set_num_threads(1)
    c1 = as_vector(c1, "c1")
    c2 = as_vector(c2, "c2")
    z = as_vector(z, "z")
    alpha = as_vector(alpha_obs, "alpha_obs")
    x = as_vector(x, "x")
    layers = model.layers if isinstance(model, MLPModel) else (model.M,)
    activations = model.activations if isinstance(model, MLPModel) else ()
    inner = dataclasses.replace(inner, backtracking=False)
    target = int(np.argmax(z)) if forced_target is None else int(forced_target)

    layer_ts = [torch.tensor(W, requires_grad=True) for W in layers]
    c1_t = torch.tensor(c1, requires_grad=True)
    c2_t = torch.tensor(c2, requires_grad=True)
    z_t = torch.tensor(z, requires_grad=True)
    x_t = torch.tensor(x)
    alpha_t = torch.tensor(alpha)

    lo = torch.minimum(c1_t, c2_t)
    hi = torch.maximum(c1_t, c2_t)
    a_opt = _unrolled_attack(layer_ts, activations, x_t, lo, hi, target, inner)
    mu_layers = prior.muM.layers if isinstance(prior.muM, MLPModel) else (prior.muM.M,)
    dev = sum(((Wt - torch.tensor(muW)) ** 2).sum() for Wt, muW in zip(layer_ts, mu_layers))
    dev = (dev + ((c1_t - torch.tensor(prior.muC1)) ** 2).sum()
           + ((c2_t - torch.tensor(prior.muC2)) ** 2).sum()
           + ((z_t - torch.tensor(prior.muZ)) ** 2).sum())
    objective = prior_weight * dev + ((alpha_t - a_opt) ** 2).sum()
    objective.backward()

    grads = {f"layer{k}": Wt.grad.numpy().copy() for k, Wt in enumerate(layer_ts)}
    grads["c1"] = c1_t.grad.numpy().copy()
    grads["c2"] = c2_t.grad.numpy().copy()
    grads["z"] = z_t.grad.numpy().copy()
    return float(objective.detach()), grads


def _box_fd_value_grad(params: Dict[str, np.ndarray], template: ModelBelief,
                       alpha: np.ndarray, x: np.ndarray, prior: BoxPrior,
                       lam: float, inner: PGDConfig, fd_step: float,
                       forced_target: Optional[int],
                       ) -> Tuple[float, Dict[str, np.ndarray]]:
    def value(p: Dict[str, np.ndarray]) -> float:
        return outer_objective_box(_params_to_model(p, template), p["c1"], p["c2"],
                                   p["z"], alpha, x, prior, lam, inner,
                                   forced_target=forced_target)

    base = value(params)
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            up = value(params)
            flat[i] = orig - fd_step
            down = value(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * fd_step)
        grads[name] = g
    return base, grads


def _infer_box_single(alpha: np.ndarray, x: np.ndarray, prior: BoxPrior,
                      cfg: InferenceConfig, forced_target: Optional[int],
                      ) -> Tuple[Dict[str, np.ndarray], float, np.ndarray, bool]:
    template = prior.muM
    layers = template.layers if isinstance(template, MLPModel) else (template.M,)
    params: Dict[str, np.ndarray] = {f"layer{k}": W.copy() for k, W in enumerate(layers)}
    params["c1"] = prior.muC1.copy()
    params["c2"] = prior.muC2.copy()
    params["z"] = prior.muZ.copy()
    lam = cfg.prior_weight

    def project(p: Dict[str, np.ndarray]) -> None:
        lo = np.minimum(p["c1"], p["c2"])
        hi = np.maximum(p["c1"], p["c2"])
        p["c1"], p["c2"] = lo, hi

    if cfg.grad_mode == "unrolled":
        inner = dataclasses.replace(cfg.inner, backtracking=False)

        def value_and_grad(p):
            return box_objective_and_grad_unrolled(
                _params_to_model(p, template), p["c1"], p["c2"], p["z"],
                alpha, x, prior, lam, inner, forced_target=forced_target)

        def value_only(p):
            return outer_objective_box(_params_to_model(p, template), p["c1"], p["c2"],
                                       p["z"], alpha, x, prior, lam, inner,
                                       forced_target=forced_target)

        return _descend(params, value_and_grad, value_only, cfg, project=project)

    def value_and_grad(p):
        return _box_fd_value_grad(p, template, alpha, x, prior, lam,
                                  cfg.inner, cfg.fd_step, forced_target)

    def value_only(p):
        return outer_objective_box(_params_to_model(p, template), p["c1"], p["c2"],
                                   p["z"], alpha, x, prior, lam, cfg.inner,
                                   forced_target=forced_target)

    return _descend(params, value_and_grad, value_only, cfg, project=project)


def infer_box(alpha_obs, x, prior: BoxPrior, family: str, cfg: InferenceConfig) -> InferenceResult:
    """Recover (model weights, box bounds, target class) for an attractive
    attacker from one observed attack at input x.

    Each epoch re-solves the inner attack from scratch at the current
    parameters (target class = argmax of the relaxed label vector z) and
    takes one outer step. Box feasibility is restored by componentwise
    min/max after every step. With cfg.exhaustive_classes the whole run is
    repeated once per candidate target class.
    """
    torch.set_num_threads(1)
    alpha = as_vector(alpha_obs, "alpha_obs")
    x = as_vector(x, "x")
    if family not in ("logistic", "mlp"):
        raise ValueError(f"unknown attacker family {family!r}")
    if family == "logistic" and not isinstance(prior.muM, LogisticModel):
        raise ValueError("prior model is not a LogisticModel")
    if family == "mlp" and not isinstance(prior.muM, MLPModel):
        raise ValueError("prior model is not an MLPModel")
    d = model_input_dim(prior.muM)
    if alpha.size != d or x.size != d:
        raise ValueError(f"alpha_obs and x must have length {d}")

    if cfg.exhaustive_classes:
        q = model_num_classes(prior.muM)
        runs = [_infer_box_single(alpha, x, prior, cfg, forced_target=k) for k in range(q)]
        scores = [run[1] for run in runs]
        pick = int(np.argmin(scores))
        best, _, trace, converged = runs[pick]
        target = pick
    else:
        best, _, trace, converged = _infer_box_single(alpha, x, prior, cfg, forced_target=None)
        target = int(np.argmax(best["z"]))

    model = _params_to_model(best, prior.muM)
    lo = np.minimum(best["c1"], best["c2"])
    hi = np.maximum(best["c1"], best["c2"])
    estimate = BoxAttacker(model=model, c1=lo, c2=hi, target=target)
    inner = dataclasses.replace(cfg.inner, backtracking=False) \
        if cfg.grad_mode == "unrolled" else cfg.inner
    return InferenceResult(
        estimate=estimate,
        loss_trace=trace,
        alpha_opt_final=optimal_attack_box(estimate, x, inner),
        converged=converged,
        z_hat=best["z"].copy(),
    )
