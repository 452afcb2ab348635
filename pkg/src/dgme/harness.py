"""Experiment orchestration: config files, fold runs, ablation sweeps, outputs.

A run is fully determined by its ``ExperimentConfig``.  Fold ``f`` of an
experiment with master seed ``s`` uses the index split drawn from stream
``(s, FOLDS, f)`` (CSV data) or the toy draw with seed ``toy_seed + f``
(toy data), and trains with seed ``derive_seed(s, FOLDS, f, 1)``.

Outputs in ``out_dir``:

* ``records.csv``: one row per (experiment, model, fold, metric)
* ``summary.json``: mean and standard error across folds plus the
  effective config
* ``diagnostics_<experiment>_fold<f>.csv``: per-round EM trace (DGME only)
* ``model_<experiment>_fold<f>.json``: checkpoint of each fitted model
"""

import configparser
import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines, checkpoint
from .data import ToySpec, generate_toy, generate_toy_ood, load_csv, split_folds, standardize
from .mixture import MixtureModel, TrainConfig, components_by_weight, fit_em
from .predictive import METRICS, evaluate, excess_kurtosis, sample_predictive
from .seeding import STREAM_FOLDS, STREAM_TOY, derive_seed

log = logging.getLogger(__name__)

MODEL_KINDS = checkpoint.MODEL_KINDS
TEST_SETS = ("iid", "ood")
EM_BUDGET_CELLS = ((1, 50), (2, 25), (5, 10), (10, 5), (25, 2), (50, 1))
DROPOUT_GRID = (0.0, 0.05, 0.1, 0.15, 0.2)


class ExperimentError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    model: str = "dgme"
    seed: int = 0
    toy: ToySpec = None
    csv_path: str = None
    target: str = "y"
    test_set: str = "iid"
    test_n: int = 200
    n_folds: int = 1
    train_fraction: float = 0.9
    metrics: tuple = METRICS
    eval_masks: int = 100
    train: TrainConfig = field(default_factory=TrainConfig)
    variance_grid: tuple = baselines.DEFAULT_VARIANCE_GRID
    out_dir: str = None

    def validate(self):
        if (self.toy is None) == (self.csv_path is None):
            raise ValueError("exactly one data source (toy case or csv path) is required")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODEL_KINDS}")
        if self.test_set not in TEST_SETS:
            raise ValueError(f"test_set must be one of {TEST_SETS}, got {self.test_set!r}")
        if self.test_set == "ood" and self.toy is None:
            raise ValueError("test_set 'ood' is only defined for toy data")
        if self.n_folds < 1 or self.test_n < 1 or self.eval_masks < 0:
            raise ValueError("n_folds and test_n must be >= 1, eval_masks >= 0")
        for m in self.metrics:
            if m not in METRICS:
                raise ValueError(f"unknown metric {m!r}; expected a subset of {METRICS}")
        self.train.validate()
        if self.toy is not None:
            self.toy.validate()
        return self

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["toy"] = None if self.toy is None else asdict(self.toy)
        d["train"] = self.train.to_dict()
        d["metrics"] = list(self.metrics)
        d["variance_grid"] = list(self.variance_grid)
        return d

    def config_hash(self):
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("name")
        blob = json.dumps(d, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---- config files ----

_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_list(text, cast):
    return tuple(cast(v) for v in str(text).replace(",", " ").split())


def config_from_mapping(sections):
    """Build an ``ExperimentConfig`` from ``{section: {key: str}}``.

    Sections: ``experiment``, ``data``, ``train``, ``mcd``.  Unknown keys
    are errors so typos do not silently fall back to defaults.
    """
    allowed = {
        "experiment": {"name", "model", "seed", "n_folds", "train_fraction", "metrics", "eval_masks", "out"},
        "data": {"toy", "csv", "target", "n", "p_u", "noise_variance", "dof", "x_range", "toy_seed", "test_set", "test_n"},
        "train": set(_TRAIN_TYPES),
        "mcd": {"variance_grid"},
    }
    for sec, items in sections.items():
        if sec not in allowed:
            raise ValueError(f"unknown config section [{sec}]")
        bad = set(items) - allowed[sec]
        if bad:
            raise ValueError(f"unknown key(s) in [{sec}]: {sorted(bad)}")
    ex, da, tr, mc = (sections.get(s, {}) for s in ("experiment", "data", "train", "mcd"))

    seed = int(ex.get("seed", 0))
    train_kw = {}
    for k, v in tr.items():
        t = _TRAIN_TYPES[k]
        train_kw[k] = str(v) if t in (str, "str") else (float(v) if t in (float, "float") else int(v))
    train_kw.setdefault("seed", seed)

    toy = None
    if "toy" in da:
        toy_kw = {"case": da["toy"], "seed": int(da.get("toy_seed", seed))}
        for k, cast in (("n", int), ("p_u", float), ("noise_variance", float), ("dof", float)):
            if k in da:
                toy_kw[k] = cast(da[k])
        if "x_range" in da:
            toy_kw["x_range"] = _parse_list(da["x_range"], float)
        toy = ToySpec(**toy_kw)
    cfg = ExperimentConfig(
        name=ex.get("name", "experiment"),
        model=ex.get("model", "dgme"),
        seed=seed,
        toy=toy,
        csv_path=da.get("csv"),
        target=da.get("target", "y"),
        test_set=da.get("test_set", "iid"),
        test_n=int(da.get("test_n", 200)),
        n_folds=int(ex.get("n_folds", 1)),
        train_fraction=float(ex.get("train_fraction", 0.9)),
        metrics=_parse_list(ex["metrics"], str) if "metrics" in ex else METRICS,
        eval_masks=int(ex.get("eval_masks", 100)),
        train=TrainConfig(**train_kw),
        variance_grid=_parse_list(mc["variance_grid"], float) if "variance_grid" in mc else baselines.DEFAULT_VARIANCE_GRID,
        out_dir=ex.get("out"),
    )
    return cfg.validate()


def read_config_sections(path=None):
    sections = {}
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(f"config file not found: {path}")
        sections = {s: dict(parser.items(s)) for s in parser.sections()}
    return sections


def apply_overrides(sections, overrides):
    """Merge ``section.key=value`` strings into a sections mapping."""
    out = {s: dict(v) for s, v in sections.items()}
    for item in overrides:
        key, sep, value = item.partition("=")
        sec, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ValueError(f"override {item!r} must look like section.key=value")
        out.setdefault(sec, {})[name] = value.strip()
    return out


def load_config(path=None, overrides=()):
    return config_from_mapping(apply_overrides(read_config_sections(path), overrides))


# ---- data and fitting ----


def fold_data(cfg, fold):
    """Raw (unstandardized) ``(train, test)`` for one fold."""
    if cfg.toy is not None:
        spec = replace(cfg.toy, seed=cfg.toy.seed + fold)
        train = generate_toy(spec)
        if cfg.test_set == "ood":
            test = generate_toy_ood(spec, cfg.test_n)
        else:
            test_spec = replace(spec, n=cfg.test_n, seed=derive_seed(spec.seed, STREAM_TOY, 2))
            test = generate_toy(test_spec)
        return train, test
    data = load_csv(cfg.csv_path, cfg.target)
    tr, te = split_folds(data, cfg.n_folds, cfg.train_fraction, cfg.seed)[fold]
    return data.subset(tr), data.subset(te)


def fit_model(kind, data, config, variance_grid=baselines.DEFAULT_VARIANCE_GRID):
    if kind == "dgme":
        return fit_em(data, config)
    if kind == "de":
        return baselines.fit_de(data, config)
    if kind == "mdn":
        return baselines.fit_mdn(data, config)
    if kind == "mcd":
        return baselines.fit_mcd(data, config, variance_grid)
    raise ValueError(f"unknown model kind {kind!r}")


def _eval_masks(cfg, model):
    # MCD already averages dropout passes inside its prediction
    if model.p_d > 0 and not isinstance(model, baselines.McdModel):
        return cfg.eval_masks
    return 0


@dataclass
class ResultRecord:
    experiment: str
    model: str
    fold: int
    metric: str
    value: float
    config_hash: str
    seed: int


RECORD_FIELDS = [f.name for f in fields(ResultRecord)]


def write_diagnostics(path, model):
    k = model.n_components
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "q", "joint_nll"] + [f"pi_{i + 1}" for i in range(k)])
        for h in model.history:
            w.writerow([h["round"], repr(h["q"]), repr(h["joint_nll"])] + [repr(v) for v in h["weights"]])


def run_fold(cfg, fold):
    train_raw, test_raw = fold_data(cfg, fold)
    train, scaler = standardize(train_raw)
    test = scaler.apply(test_raw)
    tcfg = replace(cfg.train, seed=derive_seed(cfg.seed, STREAM_FOLDS, fold, 1))
    model = fit_model(cfg.model, train, tcfg, cfg.variance_grid)
    n_masks = _eval_masks(cfg, model)
    mseed = derive_seed(cfg.seed, STREAM_FOLDS, fold, 2)
    values = evaluate(model, train, scaler, cfg.metrics, "train_", n_masks, mseed)
    values.update(evaluate(model, test, scaler, cfg.metrics, "test_", n_masks, mseed))
    if isinstance(model, MixtureModel):
        for rank, k in enumerate(components_by_weight(model)):
            values[f"pi_{rank + 1}"] = float(model.weights[k])
    return model, scaler, tcfg, values


def run_experiment(cfg, write=True):
    """Fit and evaluate ``cfg.model`` on every fold; returns the records."""
    cfg.validate()
    digest = cfg.config_hash()
    records = []
    out = Path(cfg.out_dir) if (write and cfg.out_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for fold in range(cfg.n_folds):
        try:
            model, scaler, tcfg, values = run_fold(cfg, fold)
        except Exception as exc:
            raise ExperimentError(f"{cfg.name}: fold {fold} failed: {exc}") from exc
        for metric, value in values.items():
            if not math.isfinite(value):
                raise ExperimentError(f"{cfg.name}: fold {fold}: metric {metric} is not finite ({value})")
            records.append(ResultRecord(cfg.name, cfg.model, fold, metric, float(value), digest, tcfg.seed))
        log.info("%s fold %d: %s", cfg.name, fold, {k: round(v, 4) for k, v in values.items()})
        if out is not None:
            tag = f"{cfg.name}_fold{fold}"
            checkpoint.save_checkpoint(out / f"model_{tag}.json", model, scaler, {"experiment": cfg.to_dict(), "train": tcfg.to_dict()})
            if isinstance(model, MixtureModel):
                write_diagnostics(out / f"diagnostics_{tag}.csv", model)
    if out is not None:
        write_outputs(out, records, [cfg])
    return records


def summarize(records):
    """Mean and standard error (ddof=1) per (experiment, model, metric)."""
    groups = {}
    for r in records:
        groups.setdefault((r.experiment, r.model, r.metric), []).append(r.value)
    rows = []
    for (exp, model, metric), vals in groups.items():
        v = np.asarray(vals)
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        rows.append({"experiment": exp, "model": model, "metric": metric, "mean": float(v.mean()), "se": se, "n": len(v)})
    return rows


def write_records(path, records):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.experiment, r.model, r.fold, r.metric, repr(r.value), r.config_hash, r.seed])


def read_records(path):
    with Path(path).open(newline="") as fh:
        return [
            ResultRecord(row["experiment"], row["model"], int(row["fold"]), row["metric"], float(row["value"]), row["config_hash"], int(row["seed"]))
            for row in csv.DictReader(fh)
        ]


def write_outputs(out, records, configs):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(out / "records.csv", records)
    doc = {"summary": summarize(records), "configs": [c.to_dict() for c in configs]}
    (out / "summary.json").write_text(json.dumps(doc, indent=2, default=list))


def run_sweep(cfg, param, values):
    """Repeat ``run_experiment`` with one ``TrainConfig`` field varied."""
    if param not in _TRAIN_TYPES:
        raise ValueError(f"cannot sweep unknown training field {param!r}")
    records, configs = [], []
    for v in values:
        c = replace(cfg, name=f"{cfg.name}_{param}={v}", train=replace(cfg.train, **{param: v}))
        configs.append(c)
        records.extend(run_experiment(c, write=False))
    if cfg.out_dir:
        write_outputs(cfg.out_dir, records, configs)
    return records


def run_em_budget_ablation(cfg, budget=50, cells=None):
    """Train NLL for every ``(epochs, rounds)`` cell with ``epochs * rounds == budget``."""
    cells = EM_BUDGET_CELLS if cells is None else tuple(tuple(c) for c in cells)
    for e, j in cells:
        if e * j != budget:
            raise ValueError(f"cell (E={e}, J={j}) does not factor the budget {budget}")
    base = replace(cfg, model="dgme", metrics=("nll",))
    records, configs = [], []
    for e, j in cells:
        c = replace(base, name=f"{cfg.name}_E{e}_J{j}", train=replace(cfg.train, epochs=e, em_rounds=j))
        configs.append(c)
        records.extend(r for r in run_experiment(c, write=False) if r.metric == "train_nll")
    if cfg.out_dir:
        write_outputs(cfg.out_dir, records, configs)
    return records


def run_dropout_ablation(cfg, grid=DROPOUT_GRID):
    """Train and test NLL of ``cfg.model`` for each dropout rate in ``grid``."""
    grid = tuple(float(p) for p in grid)
    if not grid:
        raise ValueError("dropout grid is empty")
    for p in grid:
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate {p} outside [0, 1)")
    base = replace(cfg, metrics=("nll",))
    records, configs = [], []
    for p in grid:
        c = replace(base, name=f"{cfg.name}_pd{p:g}", train=replace(cfg.train, p_d=p))
        configs.append(c)
        records.extend(r for r in run_experiment(c, write=False) if r.metric in ("train_nll", "test_nll"))
    if cfg.out_dir:
        write_outputs(cfg.out_dir, records, configs)
    return records


def emit_histogram_data(model, x_points, n_draws, p_d, seed, out, scaler=None):
    """Write ``n_draws`` predictive samples per query point plus a summary.

    ``x_points`` are in original units; with a ``scaler`` they are
    standardized before prediction and samples are mapped back.  Writes
    ``samples_<i>.csv`` (one column ``y``) and ``summary.csv`` with mean,
    variance and excess kurtosis of the emitted samples.  Returns the
    summary rows.
    """
    if n_draws < 1:
        raise ValueError(f"need at least one sample per point, got {n_draws}")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write histogram data to {out}: {exc}") from exc
    xs = np.asarray(x_points, dtype=np.float64)
    d_x = model.members[0].d_x if hasattr(model, "members") else model.params.d_x
    xs = xs.reshape(-1, d_x)
    rows = []
    for i, x in enumerate(xs):
        xq = scaler.apply_features(x[None, :]) if scaler is not None else x[None, :]
        values = sample_predictive(model, xq, n_draws, p_d, derive_seed(seed, i)).values
        if scaler is not None:
            values = values * scaler.target_std + scaler.target_mean
        path = out / f"samples_{i}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y"])
            w.writerows([repr(float(v))] for v in values)
        kurt = excess_kurtosis(values) if n_draws >= 4 and np.var(values) > 0 else float("nan")
        rows.append({"point": i, "x": x.tolist(), "n": n_draws, "mean": float(values.mean()), "var": float(values.var()), "excess_kurtosis": kurt, "file": path.name})
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "x", "n", "mean", "var", "excess_kurtosis", "file"])
        for r in rows:
            w.writerow([r["point"], " ".join(repr(v) for v in r["x"]), r["n"], repr(r["mean"]), repr(r["var"]), repr(r["excess_kurtosis"]), r["file"]])
    return rows

