"""Dataset ingestion, flat key=value config parsing, and result serialization."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from typing import List, Optional

import numpy as np

from .attackers import LogisticModel, MLPModel, ModelBelief

__all__ = [
    "ExperimentConfig",
    "LabeledDataset",
    "config_to_text",
    "load_pendigits",
    "parse_config",
    "read_model",
    "read_summary_csv",
    "read_summary_json",
    "write_model",
    "write_summary",
]


@dataclass(frozen=True)
class LabeledDataset:
    """Feature rows with integer class labels in 0..q-1."""

    features: np.ndarray
    labels: np.ndarray
    d: int
    q: int

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("features must be a nonempty 2-d array")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain non-finite entries")
        if y.shape != (X.shape[0],):
            raise ValueError("labels must match the number of feature rows")
        if X.shape[1] != self.d:
            raise ValueError(f"features have {X.shape[1]} columns, expected d={self.d}")
        if np.any(y < 0) or np.any(y >= self.q):
            raise ValueError(f"labels must lie in 0..{self.q - 1}")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]


def load_pendigits(path) -> LabeledDataset:
    """Parse the handwritten-digit record format: one record per line,
    17 comma-separated integers (16 coordinates in [0, 100] plus a class
    label 0-9), surrounding whitespace tolerated, blank lines skipped.
    Coordinates are scaled to [0, 1] by dividing by 100.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset file not found: {path}")
    rows: List[List[int]] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            parts = [p.strip() for p in stripped.split(",")]
            if len(parts) != 17:
                raise ValueError(f"line {lineno}: expected 17 comma-separated fields, got {len(parts)}")
            try:
                values = [int(p) for p in parts]
            except ValueError:
                raise ValueError(f"line {lineno}: non-integer field") from None
            if not (0 <= values[-1] <= 9):
                raise ValueError(f"line {lineno}: label {values[-1]} outside 0-9")
            rows.append(values)
    if not rows:
        raise ValueError("no records")
    arr = np.asarray(rows, dtype=np.float64)
    return LabeledDataset(features=arr[:, :16] / 100.0,
                          labels=arr[:, 16].astype(np.int64), d=16, q=10)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full settings for a trial-based recovery experiment.

    Defaults follow the standard protocol: prior weight 0.1, learning rate
    0.01, 5000 epochs, 100 trials.
    """

    parameterization: str = "linear"
    d: int = 10
    q: int = 5
    sample_scale: float = 0.25
    prior_weight: float = 0.1  # config key: lambda
    learning_rate: float = 0.01
    epochs: int = 5000
    grad_mode: str = "unrolled"
    inner_steps: int = 300
    inner_step_size: float = 0.05
    trials: int = 100
    master_seed: int = 0
    dataset_path: Optional[str] = None
    hidden_sizes: List[int] = field(default_factory=lambda: [32])
    train_epochs: int = 1500
    train_lr: float = 1.0
    output_path: Optional[str] = None
    output_format: str = "json"

    def __post_init__(self):
        if self.parameterization not in ("linear", "logistic", "mlp"):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        for name in ("d", "q", "epochs", "inner_steps", "trials", "train_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("sample_scale", "learning_rate", "inner_step_size", "train_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.prior_weight < 0:
            raise ValueError("lambda must be >= 0")
        if self.master_seed < 0:
            raise ValueError("master_seed must be >= 0")
        if self.grad_mode not in ("unrolled", "finite_diff"):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")
        if self.output_format not in ("json", "csv"):
            raise ValueError(f"unknown output_format {self.output_format!r}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes entries must be >= 1")


# config key -> (dataclass field, parser)
def _parse_int(s: str) -> int:
    return int(s, 10)


def _parse_hidden(s: str) -> List[int]:
    s = s.strip()
    if not s:
        return []
    return [int(p.strip(), 10) for p in s.split(",")]


_CONFIG_KEYS = {
    "parameterization": ("parameterization", str),
    "d": ("d", _parse_int),
    "q": ("q", _parse_int),
    "sample_scale": ("sample_scale", float),
    "lambda": ("prior_weight", float),
    "learning_rate": ("learning_rate", float),
    "epochs": ("epochs", _parse_int),
    "grad_mode": ("grad_mode", str),
    "inner_steps": ("inner_steps", _parse_int),
    "inner_step_size": ("inner_step_size", float),
    "trials": ("trials", _parse_int),
    "master_seed": ("master_seed", _parse_int),
    "dataset_path": ("dataset_path", str),
    "hidden_sizes": ("hidden_sizes", _parse_hidden),
    "train_epochs": ("train_epochs", _parse_int),
    "train_lr": ("train_lr", float),
    "output_path": ("output_path", str),
    "output_format": ("output_format", str),
}


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` lines are comments, blank lines are
    skipped, unknown keys are errors, missing keys take the defaults."""
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        field_name, parser = _CONFIG_KEYS[key]
        try:
            overrides[field_name] = parser(value)
        except ValueError:
            raise ValueError(f"line {lineno}: cannot parse value {value!r} for key {key!r}") from None
    return ExperimentConfig(**overrides)


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def apply_overrides(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply ``key=value`` override strings on top of a parsed config."""
    text = "\n".join(pairs)
    merged = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise ValueError(f"override {line!r}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"override: unknown key {key!r}")
        field_name, parser = _CONFIG_KEYS[key]
        try:
            merged[field_name] = parser(value.strip())
        except ValueError:
            raise ValueError(f"override: cannot parse value {value!r} for key {key!r}") from None
    return ExperimentConfig(**merged)


def config_to_text(cfg: ExperimentConfig) -> str:
    """Serialize a config so that parse_config_text round-trips it exactly."""
    lines = []
    for key, (field_name, _) in _CONFIG_KEYS.items():
        value = getattr(cfg, field_name)
        if value is None:
            continue
        if field_name == "hidden_sizes":
            value = ",".join(str(h) for h in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _config_dict(cfg) -> dict:
    if cfg is None:
        return None
    out = {}
    for key, (field_name, _) in _CONFIG_KEYS.items():
        out[key] = getattr(cfg, field_name)
    return out


def _record_dict(rec) -> dict:
    return {
        "trial_id": rec.trial_id,
        "seed": rec.seed,
        "err_prior": rec.err_prior,
        "err_estimate": rec.err_estimate,
        "per": rec.per,
    }


def _fmt17(value: Optional[float]) -> str:
    return "" if value is None else format(value, ".17g")


def write_summary(summary, path, format: str = "json") -> None:
    """Serialize a trial summary.

    JSON: one object with the effective config, counts, aggregates (null when
    no trial produced a defined error reduction), and per-trial records.
    CSV: header ``trial_id,seed,err_prior,err_estimate,per`` plus one row per
    trial; floats carry 17 significant digits so parsing them back is exact.
    """
    if format == "json":
        payload = summary_to_json_dict(summary)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    elif format == "csv":
        lines = ["trial_id,seed,err_prior,err_estimate,per"]
        for rec in summary.records:
            lines.append(",".join([
                str(rec.trial_id), str(rec.seed),
                _fmt17(rec.err_prior), _fmt17(rec.err_estimate), _fmt17(rec.per),
            ]))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def summary_to_json_dict(summary) -> dict:
    valid = [r for r in summary.records if r.per is not None]
    aggregates = None
    if valid:
        aggregates = {
            "median_per": summary.median_per,
            "max_per": summary.max_per,
            "fraction_positive": summary.fraction_positive,
        }
    return {
        "config": _config_dict(summary.config),
        "count": len(summary.records),
        "degenerate_trials": summary.degenerate_trials,
        "aggregates": aggregates,
        "records": [_record_dict(r) for r in summary.records],
    }


def read_summary_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def read_summary_csv(path) -> List[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "trial_id,seed,err_prior,err_estimate,per":
        raise ValueError("missing or malformed CSV header")
    out = []
    for line in lines[1:]:
        if not line:
            continue
        tid, seed, ep, ee, p = line.split(",")
        out.append({
            "trial_id": int(tid),
            "seed": int(seed),
            "err_prior": float(ep),
            "err_estimate": float(ee),
            "per": float(p) if p else None,
        })
    return out


def write_model(model: ModelBelief, path) -> None:
    """Persist a classifier belief as JSON."""
    if isinstance(model, LogisticModel):
        payload = {"kind": "logistic", "M": model.M.tolist()}
    else:
        payload = {
            "kind": "mlp",
            "layers": [W.tolist() for W in model.layers],
            "activations": list(model.activations),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def read_model(path) -> ModelBelief:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    kind = payload.get("kind")
    if kind == "logistic":
        return LogisticModel(M=np.asarray(payload["M"], dtype=np.float64))
    if kind == "mlp":
        return MLPModel(layers=tuple(np.asarray(W, dtype=np.float64) for W in payload["layers"]),
                        activations=tuple(payload["activations"]))
    raise ValueError(f"unknown model kind {kind!r}")
