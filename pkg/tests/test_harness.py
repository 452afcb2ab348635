import csv
import json

import numpy as np
import pytest

from dgme import harness
from dgme.data import ToySpec, generate_toy, save_csv, standardize
from dgme.harness import (
    ExperimentConfig,
    ExperimentError,
    config_from_mapping,
    emit_histogram_data,
    load_config,
    read_records,
    run_dropout_ablation,
    run_em_budget_ablation,
    run_experiment,
    run_sweep,
    summarize,
)
from dgme.mixture import TrainConfig, fit_em
from dgme.predictive import excess_kurtosis

FAST = TrainConfig(n_components=2, em_rounds=2, epochs=2, hidden=8)


def toy_cfg(case="gaussian", n=120, **kw):
    kw.setdefault("train", FAST)
    return ExperimentConfig(toy=ToySpec(case, n=n, seed=1), **kw)


def test_run_twice_identical_records(tmp_path):
    a = run_experiment(toy_cfg(out_dir=str(tmp_path / "a")))
    b = run_experiment(toy_cfg(out_dir=str(tmp_path / "b")))
    assert a == b
    assert (tmp_path / "a" / "records.csv").read_text() == (tmp_path / "b" / "records.csv").read_text()


def test_outputs_written(tmp_path):
    cfg = toy_cfg("bimodal", n_folds=2, out_dir=str(tmp_path))
    records = run_experiment(cfg)
    names = {p.name for p in tmp_path.iterdir()}
    assert {"records.csv", "summary.json", "diagnostics_experiment_fold0.csv", "model_experiment_fold1.json"} <= names
    metrics = {r.metric for r in records}
    assert {"train_nll", "test_nll", "train_rmse", "pi_1", "pi_2"} <= metrics
    with (tmp_path / "diagnostics_experiment_fold0.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["round"]) for r in rows] == [1, 2] and "pi_2" in rows[0]


def test_summary_matches_recomputation(tmp_path):
    cfg = toy_cfg(n_folds=3, out_dir=str(tmp_path))
    run_experiment(cfg)
    recs = read_records(tmp_path / "records.csv")
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert summarize(recs) == doc["summary"]
    row = next(r for r in doc["summary"] if r["metric"] == "test_nll")
    vals = np.array([r.value for r in recs if r.metric == "test_nll"])
    assert row["mean"] == vals.mean() and row["se"] == vals.std(ddof=1) / np.sqrt(3)
    assert doc["configs"][0]["train"]["n_components"] == 2


def test_sweep_gives_one_summary_row_per_value():
    recs = run_sweep(toy_cfg(), "em_rounds", [1, 2, 5, 10])
    rows = [r for r in summarize(recs) if r["metric"] == "train_nll"]
    assert len(rows) == 4
    with pytest.raises(ValueError):
        run_sweep(toy_cfg(), "depth", [1])


def test_csv_fold_protocol(tmp_path):
    save_csv(generate_toy(ToySpec("gaussian", n=100, seed=3)), tmp_path / "d.csv")
    cfg = ExperimentConfig(csv_path=str(tmp_path / "d.csv"), target="y", n_folds=4, train=FAST, model="de")
    recs = run_experiment(cfg)
    assert sorted({r.fold for r in recs}) == [0, 1, 2, 3]
    assert len({r.seed for r in recs}) == 4


@pytest.mark.parametrize("kind", ["dgme", "de", "mdn", "mcd"])
def test_every_model_kind_runs(kind):
    cfg = toy_cfg(model=kind, train=TrainConfig(n_components=2, em_rounds=1, epochs=1, hidden=4, p_d=0.1), eval_masks=5)
    recs = run_experiment(cfg)
    assert all(np.isfinite(r.value) for r in recs)


def test_fold_failure_reports_index(monkeypatch):
    calls = []

    def flaky(kind, data, config, grid):
        calls.append(1)
        if len(calls) == 2:
            raise FloatingPointError("boom")
        return fit_em(data, config)

    monkeypatch.setattr(harness, "fit_model", flaky)
    with pytest.raises(ExperimentError, match="fold 1 failed: boom"):
        run_experiment(toy_cfg(n_folds=3))


def test_em_budget_cells():
    cfg = toy_cfg("bimodal", n=60)
    recs = run_em_budget_ablation(cfg, 50, cells=[(5, 10), (10, 5)])
    assert [r.experiment for r in recs] == ["experiment_E5_J10", "experiment_E10_J5"]
    assert all(r.metric == "train_nll" for r in recs)
    assert all(e * j == 50 for e, j in harness.EM_BUDGET_CELLS)
    with pytest.raises(ValueError, match="does not factor"):
        run_em_budget_ablation(cfg, 50, cells=[(3, 17)])


def test_dropout_ablation_records():
    recs = run_dropout_ablation(toy_cfg(eval_masks=5), [0.1])
    assert sorted(r.metric for r in recs) == ["test_nll", "train_nll"]
    for bad in ([1.0], [-0.1], []):
        with pytest.raises(ValueError):
            run_dropout_ablation(toy_cfg(), bad)


def test_histogram_data(tmp_path):
    data = generate_toy(ToySpec("heavy_tailed", n=100, seed=0))
    std, sc = standardize(data)
    model = fit_em(std, FAST)
    rows = emit_histogram_data(model, [0.0, 1.5], 300, 0.0, 3, tmp_path, sc)
    assert len(rows) == 2
    for r in rows:
        with (tmp_path / r["file"]).open() as fh:
            vals = np.array([float(v["y"]) for v in csv.DictReader(fh)])
        assert vals.shape == (300,)
        assert r["excess_kurtosis"] == excess_kurtosis(vals)
    with pytest.raises(ValueError):
        emit_histogram_data(model, [0.0], 0, 0.0, 0, tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_histogram_data(model, [0.0], 10, 0.0, 0, blocker / "sub")


def test_ini_config_and_overrides(tmp_path):
    ini = tmp_path / "exp.ini"
    ini.write_text(
        "[experiment]\nname = demo\nmodel = de\nseed = 4\nn_folds = 2\n\n"
        "[data]\ntoy = bimodal\nn = 50\n\n[train]\nn_components = 3\nlr = 0.005\ninit = xavier_normal\n"
    )
    cfg = load_config(ini, ["train.epochs=7", "experiment.model=mdn"])
    assert cfg.name == "demo" and cfg.model == "mdn" and cfg.n_folds == 2
    assert cfg.toy.case == "bimodal" and cfg.toy.n == 50 and cfg.toy.p_u == 0.3
    assert cfg.train.n_components == 3 and cfg.train.lr == 0.005 and cfg.train.epochs == 7
    assert cfg.train.init == "xavier_normal" and cfg.train.seed == 4
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")
    with pytest.raises(ValueError, match="unknown key"):
        load_config(ini, ["train.epoch=7"])
    with pytest.raises(ValueError):
        load_config(ini, ["noequals"])


def test_config_needs_exactly_one_source():
    with pytest.raises(ValueError, match="exactly one"):
        config_from_mapping({"experiment": {}})
    with pytest.raises(ValueError, match="exactly one"):
        config_from_mapping({"data": {"toy": "gaussian", "csv": "x.csv"}})
    with pytest.raises(ValueError):
        config_from_mapping({"data": {"csv": "x.csv", "test_set": "ood"}})


def test_config_hash_ignores_key_order():
    a = config_from_mapping({"data": {"toy": "gaussian", "n": "50"}, "train": {"lr": "0.01", "epochs": "3"}})
    b = config_from_mapping({"train": {"epochs": "3", "lr": "0.01"}, "data": {"n": "50", "toy": "gaussian"}})
    assert a.config_hash() == b.config_hash()
    c = config_from_mapping({"data": {"toy": "gaussian", "n": "50"}, "train": {"lr": "0.02", "epochs": "3"}})
    assert c.config_hash() != a.config_hash()
