"""Command-line interface.

Machine-readable JSON goes to standard output; progress and diagnostics go to
standard error. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import List, Optional

import numpy as np

from . import data_io, experiments, identifiability
from .attackers import (
    BoxAttacker,
    LinearAttacker,
    LogisticModel,
    MLPModel,
    PGDConfig,
    logits,
    optimal_attack_box,
    optimal_attack_linear,
)
from .core_math import mahalanobis_norm, pd_from_factor
from .inference import InferenceConfig, infer_box, infer_linear
from .priors import LinearPrior, build_box_prior, linear_prior_for_model

__all__ = ["main"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _progress(verbose: bool, msg: str) -> None:
    if verbose:
        print(msg, file=sys.stderr)


def _emit(payload: dict, output: Optional[str]) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _effective_config(args) -> data_io.ExperimentConfig:
    cfg = data_io.parse_config(args.config) if args.config else data_io.ExperimentConfig()
    if args.set:
        cfg = data_io.apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    return cfg


def _model_from_payload(payload: dict):
    kind = payload.get("kind")
    if kind == "logistic":
        return LogisticModel(M=np.asarray(payload["M"], dtype=np.float64))
    if kind == "mlp":
        return MLPModel(layers=tuple(np.asarray(W, dtype=np.float64) for W in payload["layers"]),
                        activations=tuple(payload["activations"]))
    raise ValueError(f"unknown model kind {kind!r}")


def _model_to_payload(model) -> dict:
    if isinstance(model, LogisticModel):
        return {"kind": "logistic", "M": model.M.tolist()}
    return {"kind": "mlp", "layers": [W.tolist() for W in model.layers],
            "activations": list(model.activations)}


def _inner_from_spec(spec: Optional[dict], seed: int) -> PGDConfig:
    spec = dict(spec or {})
    spec.setdefault("seed", seed)
    return PGDConfig(**spec)


def _cmd_attack(args) -> None:
    spec = _load_json(args.attacker)
    kind = spec.get("parameterization")
    if kind == "linear":
        attacker = LinearAttacker(
            M=np.asarray(spec["M"], dtype=np.float64),
            Cmat=pd_from_factor(np.asarray(spec["C_factor"], dtype=np.float64)),
            c=float(spec["c"]),
            Wmat=pd_from_factor(np.asarray(spec["W_factor"], dtype=np.float64)))
        alpha = optimal_attack_linear(attacker)
        objective = mahalanobis_norm(attacker.M @ alpha, attacker.Wmat) ** 2
        _emit({"alpha_opt": alpha.tolist(), "objective": objective}, args.output)
    elif kind in ("logistic", "mlp"):
        model = _model_from_payload(spec["model"])
        attacker = BoxAttacker(model=model,
                               c1=np.asarray(spec["c1"], dtype=np.float64),
                               c2=np.asarray(spec["c2"], dtype=np.float64),
                               target=int(spec["target"]))
        x = np.asarray(spec["x"], dtype=np.float64)
        inner = _inner_from_spec(spec.get("inner"), args.seed or 0)
        alpha = optimal_attack_box(attacker, x, inner)
        prob = float(logits(model, x + alpha)[attacker.target])
        _emit({"alpha_opt": alpha.tolist(), "objective": prob}, args.output)
    else:
        raise ValueError(f"unknown parameterization {kind!r}")


def _cmd_infer(args) -> None:
    obs = _load_json(args.observation)
    cfg = _effective_config(args)
    alpha_obs = np.asarray(obs["alpha_obs"], dtype=np.float64)
    kind = obs.get("parameterization")
    seed = cfg.master_seed
    icfg = InferenceConfig(
        prior_weight=cfg.prior_weight, learning_rate=cfg.learning_rate, epochs=cfg.epochs,
        grad_mode=cfg.grad_mode,
        inner=PGDConfig(steps=cfg.inner_steps, step_size=cfg.inner_step_size, seed=seed),
        seed=seed)
    _progress(args.verbose, f"running {kind} inference for {cfg.epochs} epochs")
    if kind == "linear":
        prior_spec = obs["prior"]
        muM = np.asarray(prior_spec["muM"], dtype=np.float64)
        q, d = muM.shape
        prior = LinearPrior(
            muM=muM,
            muC=np.asarray(prior_spec.get("muC", np.eye(d).tolist()), dtype=np.float64),
            muW=np.asarray(prior_spec.get("muW", np.eye(q).tolist()), dtype=np.float64))
        result = infer_linear(alpha_obs, prior, icfg)
        est = result.estimate
        payload = {
            "estimate": {"M": est.M.tolist(), "C": est.Cmat.product.tolist(),
                         "c": est.c, "W": est.Wmat.product.tolist()},
        }
    elif kind in ("logistic", "mlp"):
        model_star = _model_from_payload(obs["model_star"])
        x = np.asarray(obs["x"], dtype=np.float64)
        prior = build_box_prior(alpha_obs, model_star, x)
        result = infer_box(alpha_obs, x, prior, kind, icfg)
        est = result.estimate
        payload = {
            "estimate": {"model": _model_to_payload(est.model), "c1": est.c1.tolist(),
                         "c2": est.c2.tolist(), "target": est.target,
                         "z_hat": result.z_hat.tolist()},
        }
    else:
        raise ValueError(f"unknown parameterization {kind!r}")
    payload["alpha_opt"] = result.alpha_opt_final.tolist()
    payload["loss_trace"] = result.loss_trace.tolist()
    payload["converged"] = result.converged
    payload["config"] = data_io._config_dict(cfg)
    _emit(payload, args.output)


def _cmd_identify(args) -> None:
    spec = _load_json(args.input)
    alpha = np.asarray(spec["alpha"], dtype=np.float64)
    seed = args.seed or 0
    if args.construct == "objective":
        M = np.asarray(spec["M"], dtype=np.float64)
        Cmat = pd_from_factor(np.asarray(spec["C_factor"], dtype=np.float64))
        c = float(spec["c"])
        Wmat = identifiability.construct_objective(alpha, M, Cmat, c)
        attacker = LinearAttacker(M=M, Cmat=Cmat, c=c, Wmat=Wmat)
        constructed = {"W": Wmat.product.tolist()}
    elif args.construct == "capability":
        M = np.asarray(spec["M"], dtype=np.float64)
        Wmat = pd_from_factor(np.asarray(spec["W_factor"], dtype=np.float64))
        Cmat, c = identifiability.construct_capability(alpha, M, Wmat)
        attacker = LinearAttacker(M=M, Cmat=Cmat, c=c, Wmat=Wmat)
        constructed = {"C": Cmat.product.tolist(), "c": c}
    elif args.construct == "knowledge":
        Cmat = pd_from_factor(np.asarray(spec["C_factor"], dtype=np.float64))
        c = float(spec["c"])
        Wmat = pd_from_factor(np.asarray(spec["W_factor"], dtype=np.float64))
        M = identifiability.construct_knowledge(alpha, Cmat, c, Wmat)
        attacker = LinearAttacker(M=M, Cmat=Cmat, c=c, Wmat=Wmat)
        constructed = {"M": M.tolist()}
    else:
        raise ValueError(f"unknown construction {args.construct!r}")
    report = identifiability.verify_membership(attacker, alpha, samples=args.samples,
                                               tol=args.tol, seed=seed)
    _emit({
        "construct": args.construct,
        "constructed": constructed,
        "is_member": report.is_member,
        "objective_at_alpha": report.objective_at_alpha,
        "best_found_objective": report.best_found_objective,
        "gap": report.gap,
    }, args.output)


def _cmd_train(args) -> None:
    cfg = _effective_config(args)
    if cfg.dataset_path:
        data = data_io.load_pendigits(cfg.dataset_path)
    else:
        data = experiments.generate_blob_dataset(cfg.d, cfg.q, n_per_class=120,
                                                 seed=cfg.master_seed)
    tcfg = experiments.TrainConfig(epochs=cfg.train_epochs, learning_rate=cfg.train_lr,
                                   hidden_sizes=list(cfg.hidden_sizes), seed=cfg.master_seed)
    if cfg.parameterization == "mlp":
        model = experiments.train_mlp(data, tcfg)
    else:
        model = experiments.train_logistic(data, dataclasses.replace(tcfg, hidden_sizes=[]))
    if args.output:
        data_io.write_model(model, args.output)
    payload = {"accuracy": experiments.accuracy(model, data),
               "config": data_io._config_dict(cfg)}
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")


def _cmd_experiment(args) -> None:
    cfg = _effective_config(args)
    threads = args.threads if args.threads else (os.cpu_count() or 1)
    _progress(args.verbose, f"running {cfg.trials} {cfg.parameterization} trials "
                            f"on {threads} worker(s)")
    summary = experiments.run_trials(cfg.parameterization, cfg, threads=threads)
    out_path = args.output or cfg.output_path
    if out_path:
        data_io.write_summary(summary, out_path, cfg.output_format)
        _progress(args.verbose, f"wrote {out_path}")
    sys.stdout.write(json.dumps(data_io.summary_to_json_dict(summary), indent=2) + "\n")


def _selftest_checks(seed: int):
    from . import selftest

    return selftest.run_all(seed)


def _cmd_selftest(args) -> None:
    checks = _selftest_checks(args.seed or 0)
    for name, passed, detail in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}", file=sys.stderr)
    payload = {"checks": [{"name": n, "passed": p, "detail": d} for n, p, d in checks],
               "all_passed": all(p for _, p, _ in checks)}
    _emit(payload, args.output)
    if not payload["all_passed"]:
        raise RuntimeError("selftest failed")


def _build_parser() -> _Parser:
    parser = _Parser(prog="atkmap",
                     description="Infer attacker parameters from observed adversarial attacks.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file (key = value lines)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable; wins over --config)")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--output", help="write the result to this path")
        p.add_argument("--threads", type=int, default=None, help="worker processes for trials")
        p.add_argument("--verbose", action="store_true", help="progress messages on stderr")

    p = sub.add_parser("attack", help="emit the optimal attack for given attacker parameters")
    p.add_argument("--attacker", required=True, help="attacker parameters (JSON file)")
    common(p)

    p = sub.add_parser("infer", help="recover attacker parameters from one observed attack")
    p.add_argument("--observation", required=True, help="observed attack and prior (JSON file)")
    common(p)

    p = sub.add_parser("identify", help="build an equivalent attacker for an observed attack")
    p.add_argument("--construct", required=True, choices=["objective", "capability", "knowledge"])
    p.add_argument("--input", required=True, help="fixed parameters and attack (JSON file)")
    p.add_argument("--samples", type=int, default=100000, help="boundary samples for verification")
    p.add_argument("--tol", type=float, default=1e-6, help="membership tolerance")
    common(p)

    p = sub.add_parser("train", help="fit the defender model used as the prior mean")
    common(p)

    p = sub.add_parser("experiment", help="run recovery trials and summarize error reduction")
    common(p)

    p = sub.add_parser("selftest", help="run the built-in numerical cross-checks")
    common(p)

    return parser


_COMMANDS = {
    "attack": _cmd_attack,
    "infer": _cmd_infer,
    "identify": _cmd_identify,
    "train": _cmd_train,
    "experiment": _cmd_experiment,
    "selftest": _cmd_selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        _COMMANDS[args.subcommand](args)
    except (_UsageError, SystemExit):
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
