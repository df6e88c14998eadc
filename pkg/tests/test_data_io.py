import json

import numpy as np
import pytest

from atkmap.attackers import LogisticModel, MLPModel
from atkmap.data_io import (
    ExperimentConfig,
    LabeledDataset,
    apply_overrides,
    config_to_text,
    load_pendigits,
    parse_config,
    parse_config_text,
    read_model,
    read_summary_csv,
    read_summary_json,
    write_model,
    write_summary,
)
from atkmap.experiments import TrialRecord, summarize


def digit_line(label=7, first3=(0, 100, 50)):
    fields = list(first3) + [10] * 13 + [label]
    return ",".join(str(v) for v in fields)


# ---------------------------------------------------------------------------
# load_pendigits


def test_loader_parses_and_scales(tmp_path):
    p = tmp_path / "digits.tra"
    p.write_text(digit_line() + "\n" + digit_line(label=3) + "\n")
    data = load_pendigits(p)
    assert data.d == 16 and data.q == 10
    assert len(data) == 2
    assert np.allclose(data.features[0, :3], [0.0, 1.0, 0.5])
    assert data.labels.tolist() == [7, 3]


def test_loader_tolerates_surrounding_whitespace(tmp_path):
    p = tmp_path / "digits.tra"
    p.write_text("  " + digit_line() + "  \n\n" + digit_line(label=1) + "\n")
    assert len(load_pendigits(p)) == 2


def test_loader_rejects_wrong_field_count(tmp_path):
    p = tmp_path / "digits.tra"
    p.write_text(digit_line() + "\n1,2,3\n")
    with pytest.raises(ValueError, match="line 2.*17"):
        load_pendigits(p)


def test_loader_rejects_non_integer_field(tmp_path):
    p = tmp_path / "digits.tra"
    p.write_text(",".join(["1.5"] + ["0"] * 16) + "\n")
    with pytest.raises(ValueError, match="line 1.*non-integer"):
        load_pendigits(p)


def test_loader_rejects_label_out_of_range(tmp_path):
    p = tmp_path / "digits.tra"
    p.write_text(",".join(["0"] * 16 + ["12"]) + "\n")
    with pytest.raises(ValueError, match="label 12"):
        load_pendigits(p)


def test_loader_rejects_empty_file(tmp_path):
    p = tmp_path / "digits.tra"
    p.write_text("\n\n")
    with pytest.raises(ValueError, match="no records"):
        load_pendigits(p)


def test_loader_missing_file():
    with pytest.raises(FileNotFoundError):
        load_pendigits("/nonexistent/digits.tra")


import os

REAL_PENDIGITS = os.environ.get(
    "ATKMAP_PENDIGITS",
    os.path.join(os.path.dirname(__file__), "..", "data", "pendigits.tra"))


@pytest.mark.skipif(not os.path.exists(REAL_PENDIGITS),
                    reason="no digit dataset file available")
def test_loader_official_training_split_counts():
    data = load_pendigits(REAL_PENDIGITS)
    assert len(data) == 7494
    assert set(np.unique(data.labels)) <= set(range(10))
    counts = np.bincount(data.labels, minlength=10)
    assert np.all(counts >= 700)


# ---------------------------------------------------------------------------
# config parsing


def test_empty_config_gives_standard_defaults():
    cfg = parse_config_text("")
    assert cfg.prior_weight == 0.1
    assert cfg.learning_rate == 0.01
    assert cfg.epochs == 5000
    assert cfg.trials == 100
    assert cfg.parameterization == "linear"


def test_config_rejects_negative_lambda():
    with pytest.raises(ValueError, match="lambda"):
        parse_config_text("lambda = -1")


def test_config_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown key"):
        parse_config_text("lamda = 0.1")


def test_config_rejects_bad_type():
    with pytest.raises(ValueError, match="line 1"):
        parse_config_text("epochs = many")


def test_config_comments_and_layout(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("# comment line\n\nlambda = 0.5\n  trials = 7\n")
    cfg = parse_config(p)
    assert cfg.prior_weight == 0.5 and cfg.trials == 7


def test_config_round_trip_exact():
    cfg = ExperimentConfig(parameterization="mlp", d=16, q=10, sample_scale=1 / 3,
                           prior_weight=0.1, learning_rate=0.017, epochs=123,
                           hidden_sizes=[32, 16], dataset_path="data/x.tra",
                           output_path="out.json", master_seed=42)
    assert parse_config_text(config_to_text(cfg)) == cfg


def test_config_hidden_sizes_formats():
    assert parse_config_text("hidden_sizes = ").hidden_sizes == []
    assert parse_config_text("hidden_sizes = 8").hidden_sizes == [8]
    assert parse_config_text("hidden_sizes = 8,4").hidden_sizes == [8, 4]


@pytest.mark.parametrize("line", [
    "trials = 0",
    "epochs = 0",
    "sample_scale = 0",
    "learning_rate = -0.1",
    "grad_mode = magic",
    "parameterization = svm",
    "output_format = xlsx",
    "hidden_sizes = 8,0",
    "master_seed = -1",
])
def test_config_domain_checks(line):
    with pytest.raises(ValueError):
        parse_config_text(line)


def test_apply_overrides_wins():
    cfg = parse_config_text("lambda = 0.5\ntrials = 10")
    out = apply_overrides(cfg, ["lambda=0.9", "d=4"])
    assert out.prior_weight == 0.9 and out.d == 4 and out.trials == 10
    with pytest.raises(ValueError, match="unknown key"):
        apply_overrides(cfg, ["nope=1"])


# ---------------------------------------------------------------------------
# summaries


def sample_summary():
    records = [
        TrialRecord(trial_id=0, err_prior=1 / 3, err_estimate=1e-17, per=100.0 * (1 / 3 - 1e-17) / (1 / 3), seed=11),
        TrialRecord(trial_id=1, err_prior=2.5000000000000004, err_estimate=0.1, per=96.0, seed=12),
        TrialRecord(trial_id=2, err_prior=5e-12, err_estimate=7.0, per=None, seed=13),
    ]
    return summarize(records, config=ExperimentConfig(trials=3))


def test_write_summary_json_round_trip(tmp_path):
    s = sample_summary()
    p = tmp_path / "out.json"
    write_summary(s, p, "json")
    payload = read_summary_json(p)
    assert payload["count"] == 3
    assert payload["degenerate_trials"] == 1
    assert payload["config"]["lambda"] == 0.1
    for rec, orig in zip(payload["records"], s.records):
        assert rec["err_prior"] == orig.err_prior  # bit-exact through JSON
        assert rec["err_estimate"] == orig.err_estimate
        assert rec["per"] == orig.per


def test_write_summary_empty_records(tmp_path):
    s = summarize([], config=ExperimentConfig())
    p = tmp_path / "empty.json"
    write_summary(s, p, "json")
    payload = read_summary_json(p)
    assert payload["count"] == 0
    assert payload["aggregates"] is None
    assert payload["records"] == []


def test_write_summary_csv_shape_and_round_trip(tmp_path):
    s = sample_summary()
    p = tmp_path / "out.csv"
    write_summary(s, p, "csv")
    lines = p.read_text().strip().split("\n")
    assert len(lines) == 4  # header + 3 records
    assert lines[0] == "trial_id,seed,err_prior,err_estimate,per"
    rows = read_summary_csv(p)
    for row, orig in zip(rows, s.records):
        assert row["trial_id"] == orig.trial_id
        assert row["seed"] == orig.seed
        assert row["err_prior"] == orig.err_prior  # 17 significant digits round-trip
        assert row["err_estimate"] == orig.err_estimate
        assert row["per"] == orig.per


def test_write_summary_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        write_summary(sample_summary(), tmp_path / "x", "xml")


# ---------------------------------------------------------------------------
# model persistence


def test_model_round_trip_logistic(tmp_path):
    model = LogisticModel(M=np.array([[0.25, -1.5], [3.125, 0.1]]))
    p = tmp_path / "model.json"
    write_model(model, p)
    back = read_model(p)
    assert isinstance(back, LogisticModel)
    assert np.array_equal(back.M, model.M)


def test_model_round_trip_mlp(tmp_path):
    model = MLPModel(layers=(np.ones((3, 2)), np.full((2, 3), 0.5)), activations=("tanh",))
    p = tmp_path / "model.json"
    write_model(model, p)
    back = read_model(p)
    assert isinstance(back, MLPModel)
    assert back.activations == ("tanh",)
    assert all(np.array_equal(a, b) for a, b in zip(back.layers, model.layers))
