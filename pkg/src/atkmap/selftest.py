"""Built-in numerical cross-checks: quick versions of the derived oracles.

Each check returns (name, passed, detail). These are sanity gates for an
installed copy; the full suites live in the test tree.
"""

from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np

from .attackers import LinearAttacker, LogisticModel, PGDConfig, optimal_attack_linear
from .core_math import (
    mahalanobis_norm,
    matrix_normal_logpdf,
    pd_from_factor,
    pd_identity,
)
from .identifiability import (
    construct_capability,
    construct_knowledge,
    construct_objective,
    verify_membership,
)
from .inference import (
    _linear_value_grad,
    box_objective_and_grad_unrolled,
    outer_objective_box,
)
from .priors import BoxPrior, LinearPrior

Check = Tuple[str, bool, str]


def _random_linear_attacker(rng: np.random.Generator, d: int, q: int) -> LinearAttacker:
    return LinearAttacker(
        M=rng.standard_normal((q, d)),
        Cmat=pd_from_factor(np.eye(d) + 0.3 * rng.standard_normal((d, d))),
        c=float(rng.uniform(0.5, 2.0)),
        Wmat=pd_from_factor(np.eye(q) + 0.3 * rng.standard_normal((q, q))),
    )


def check_linear_attack_boundary(seed: int, attackers: int = 10, samples: int = 20000) -> Check:
    rng = np.random.Generator(np.random.Philox(seed))
    worst_slack = -np.inf
    worst_sat = 0.0
    for _ in range(attackers):
        d = int(rng.integers(2, 4))
        q = int(rng.integers(2, 4))
        a = _random_linear_attacker(rng, d, q)
        alpha = optimal_attack_linear(a)
        worst_sat = max(worst_sat, abs(mahalanobis_norm(alpha, a.Cmat) - a.c))
        obj = mahalanobis_norm(a.M @ alpha, a.Wmat) ** 2
        raw = rng.standard_normal((samples, d))
        norms = np.sqrt(np.einsum("ij,jk,ik->i", raw, a.Cmat.product, raw))
        pts = (a.c / norms)[:, None] * raw
        img = pts @ a.M.T
        best = float(np.einsum("ij,jk,ik->i", img, a.Wmat.product, img).max())
        worst_slack = max(worst_slack, best - obj)
    ok = bool(worst_slack <= 1e-6 and worst_sat <= 1e-8)
    return ("linear_attack_boundary", ok,
            f"max boundary advantage {worst_slack:.3e}, max |norm-c| {worst_sat:.3e}")


def check_linear_gradient(seed: int, instances: int = 3, h: float = 1e-6) -> Check:
    rng = np.random.Generator(np.random.Philox(seed + 1))
    worst = 0.0
    for _ in range(instances):
        d, q = 4, 3
        prior = LinearPrior(muM=rng.standard_normal((q, d)), muC=np.eye(d), muW=np.eye(q))
        alpha = rng.standard_normal(d)
        params = {"M": prior.muM + 0.2 * rng.standard_normal((q, d)),
                  "G": np.eye(d) + 0.2 * rng.standard_normal((d, d)),
                  "V": np.eye(q) + 0.2 * rng.standard_normal((q, q))}
        _, grads = _linear_value_grad(params, alpha, prior, 0.1)
        for name in params:
            flat = params[name].reshape(-1)
            gflat = grads[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = _linear_value_grad(params, alpha, prior, 0.1)[0]
                flat[i] = orig - h
                down = _linear_value_grad(params, alpha, prior, 0.1)[0]
                flat[i] = orig
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - gflat[i]) / max(1.0, abs(fd)))
    return ("linear_gradient", bool(worst < 1e-5), f"max relative gradient error {worst:.3e}")


def check_unrolled_gradient(seed: int, instances: int = 2) -> Check:
    rng = np.random.Generator(np.random.Philox(seed + 2))
    worst = 0.0
    for _ in range(instances):
        d, q = 3, 3
        model_star = LogisticModel(M=rng.standard_normal((q, d)))
        muZ = np.zeros(q)
        muZ[1] = 1.0
        prior = BoxPrior(muM=model_star, muC1=np.full(d, -0.3), muC2=np.full(d, 0.3), muZ=muZ)
        model = LogisticModel(M=model_star.M + 0.1 * rng.standard_normal((q, d)))
        c1 = prior.muC1 + 0.05 * rng.standard_normal(d)
        c2 = prior.muC2 + 0.05 * rng.standard_normal(d)
        c1, c2 = np.minimum(c1, c2), np.maximum(c1, c2)
        z = muZ + 0.1 * rng.standard_normal(q)
        alpha_obs = rng.uniform(-0.2, 0.2, d)
        x = rng.standard_normal(d)
        inner = PGDConfig(steps=15, step_size=0.1, backtracking=False)
        val, grads = box_objective_and_grad_unrolled(
            model, c1, c2, z, alpha_obs, x, prior, 0.1, inner, forced_target=1)
        h = 1e-4

        def fd_on(arr, rebuild):
            nonlocal worst
            flat = arr.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = rebuild()
                flat[i] = orig - h
                down = rebuild()
                flat[i] = orig
                yield (up - down) / (2 * h)

        M_arr = model.M.copy()

        def rebuild_obj():
            return outer_objective_box(LogisticModel(M=M_arr), c1, c2, z, alpha_obs, x,
                                       prior, 0.1, inner, forced_target=1)

        fd = np.fromiter(fd_on(M_arr, rebuild_obj), dtype=np.float64)
        diff = np.abs(fd - grads["layer0"].reshape(-1))
        worst = max(worst, float((diff / np.maximum(1.0, np.abs(fd))).max()))
    return ("unrolled_gradient", bool(worst < 1e-3), f"max relative gradient error {worst:.3e}")


def check_construction_roundtrips(seed: int, trials: int = 10) -> Check:
    rng = np.random.Generator(np.random.Philox(seed + 3))
    worst = 0.0
    worst_gap = 0.0
    for _ in range(trials):
        d = int(rng.integers(2, 5))
        Cmat = pd_from_factor(np.eye(d) + 0.3 * rng.standard_normal((d, d)))
        Wmat = pd_from_factor(np.eye(d) + 0.3 * rng.standard_normal((d, d)))
        c = float(rng.uniform(0.5, 2.0))
        raw = rng.standard_normal(d)
        alpha = (c / mahalanobis_norm(raw, Cmat)) * raw
        M = np.eye(d) + 0.3 * rng.standard_normal((d, d))

        W2 = construct_objective(alpha, M, Cmat, c)
        back = optimal_attack_linear(LinearAttacker(M=M, Cmat=Cmat, c=c, Wmat=W2))
        worst = max(worst, min(np.linalg.norm(back - alpha), np.linalg.norm(back + alpha)))

        M2 = construct_knowledge(alpha, Cmat, c, Wmat)
        back = optimal_attack_linear(LinearAttacker(M=M2, Cmat=Cmat, c=c, Wmat=Wmat))
        worst = max(worst, min(np.linalg.norm(back - alpha), np.linalg.norm(back + alpha)))

        C2, c2 = construct_capability(alpha, M, Wmat)
        rep = verify_membership(LinearAttacker(M=M, Cmat=C2, c=c2, Wmat=Wmat), alpha,
                                samples=2000, tol=1e-6, seed=int(rng.integers(1 << 31)))
        worst_gap = max(worst_gap, rep.gap)
    ok = bool(worst <= 1e-6 and worst_gap <= 1e-6)
    return ("construction_roundtrips", ok,
            f"max attack mismatch {worst:.3e}, max membership gap {worst_gap:.3e}")


def check_density_reduction(seed: int, pairs: int = 10) -> Check:
    rng = np.random.Generator(np.random.Philox(seed + 4))
    q, d = 3, 4
    mean = rng.standard_normal((q, d))
    row = pd_identity(q)
    col = pd_identity(d)
    worst = 0.0
    for _ in range(pairs):
        X1 = rng.standard_normal((q, d))
        X2 = rng.standard_normal((q, d))
        lhs = matrix_normal_logpdf(X1, mean, row, col) - matrix_normal_logpdf(X2, mean, row, col)
        rhs = -0.5 * (np.sum((X1 - mean) ** 2) - np.sum((X2 - mean) ** 2))
        worst = max(worst, abs(lhs - rhs))
    return ("density_reduction", bool(worst < 1e-10), f"max constant drift {worst:.3e}")


def run_all(seed: int = 0) -> List[Check]:
    return [
        check_linear_attack_boundary(seed),
        check_linear_gradient(seed),
        check_unrolled_gradient(seed),
        check_construction_roundtrips(seed),
        check_density_reduction(seed),
    ]
