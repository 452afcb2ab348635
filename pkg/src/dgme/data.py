"""Datasets: cubic toy generators, CSV ingestion, z-scoring and fold splits."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import STREAM_FOLDS, STREAM_TOY, derive_rng

TOY_CASES = ("gaussian", "heavy_tailed", "bimodal")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    name: str = "data"

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError(f"features must be a non-empty N x d matrix, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise DataError(f"row mismatch: {x.shape[0]} feature rows vs {y.shape[0]} targets")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains non-finite entries")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.targets.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, index, name=None):
        index = np.asarray(index)
        return Dataset(self.features[index], self.targets[index], name or self.name)


@dataclass(frozen=True)
class Scaler:
    feature_means: np.ndarray
    feature_stds: np.ndarray
    target_mean: float = 0.0
    target_std: float = 1.0

    @classmethod
    def identity(cls, d_x):
        return cls(np.zeros(d_x), np.ones(d_x), 0.0, 1.0)

    def apply(self, data):
        x = (data.features - self.feature_means) / self.feature_stds
        y = (data.targets - self.target_mean) / self.target_std
        return Dataset(x, y, data.name)

    def apply_features(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, self.feature_means.shape[0])
        return (x - self.feature_means) / self.feature_stds

    def invert(self, data):
        x = data.features * self.feature_stds + self.feature_means
        y = data.targets * self.target_std + self.target_mean
        return Dataset(x, y, data.name)

    @property
    def log_target_std(self):
        return math.log(self.target_std)

    def to_dict(self):
        return {
            "feature_means": self.feature_means.tolist(),
            "feature_stds": self.feature_stds.tolist(),
            "target_mean": float(self.target_mean),
            "target_std": float(self.target_std),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["feature_means"], dtype=np.float64),
            np.asarray(d["feature_stds"], dtype=np.float64),
            float(d["target_mean"]),
            float(d["target_std"]),
        )


@dataclass(frozen=True)
class ToySpec:
    """Parameters of the cubic toy model ``y = u * x**3 + noise``.

    ``p_u`` is the probability that ``u = -1``.  The noise is rescaled so
    that its variance equals ``noise_variance`` in every case; for the
    Student-t case this requires ``dof > 2``.
    """

    case: str = "gaussian"
    n: int = 800
    p_u: float = None
    noise_variance: float = 9.0
    dof: float = 3.0
    x_range: tuple = (-4.0, 4.0)
    seed: int = 0

    def __post_init__(self):
        if self.p_u is None:
            object.__setattr__(self, "p_u", 0.3 if self.case == "bimodal" else 0.0)
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        self.validate()

    def validate(self):
        if self.case not in TOY_CASES:
            raise DataError(f"unknown toy case {self.case!r}; expected one of {TOY_CASES}")
        if int(self.n) < 1:
            raise DataError(f"n must be >= 1, got {self.n}")
        if not 0.0 <= self.p_u <= 1.0:
            raise DataError(f"p_u must lie in [0, 1], got {self.p_u}")
        if not (self.noise_variance > 0 and math.isfinite(self.noise_variance)):
            raise DataError(f"noise_variance must be positive and finite, got {self.noise_variance}")
        if self.case == "heavy_tailed" and not self.dof > 2:
            raise DataError(f"heavy_tailed noise needs dof > 2 for a finite variance, got {self.dof}")
        lo, hi = self.x_range
        if not lo < hi:
            raise DataError(f"x_range must satisfy lo < hi, got {self.x_range}")


def _toy_noise(rng, spec, n):
    if spec.case == "heavy_tailed":
        scale = math.sqrt(spec.noise_variance * (spec.dof - 2.0) / spec.dof)
        return rng.standard_t(spec.dof, size=n) * scale
    return rng.standard_normal(n) * math.sqrt(spec.noise_variance)


def _toy_targets(rng, spec, x):
    u = np.where(rng.random(x.shape[0]) < spec.p_u, -1.0, 1.0)
    return u * x**3 + _toy_noise(rng, spec, x.shape[0])


def generate_toy(spec):
    """Draw ``spec.n`` samples with x uniform on ``spec.x_range``."""
    spec.validate()
    rng = derive_rng(spec.seed, STREAM_TOY, 0)
    lo, hi = spec.x_range
    x = rng.uniform(lo, hi, size=spec.n)
    y = _toy_targets(rng, spec, x)
    return Dataset(x.reshape(-1, 1), y, f"toy-{spec.case}")


def generate_toy_ood(spec, n, band=(4.0, 5.0)):
    """Out-of-range test points with ``band[0] < |x| < band[1]``.

    Uses its own random stream so it never overlaps the training draw
    for the same seed.
    """
    spec.validate()
    lo, hi = band
    if not 0 <= lo < hi:
        raise DataError(f"band must satisfy 0 <= lo < hi, got {band}")
    rng = derive_rng(spec.seed, STREAM_TOY, 1)
    x = rng.uniform(lo, hi, size=n) * rng.choice([-1.0, 1.0], size=n)
    y = _toy_targets(rng, spec, x)
    return Dataset(x.reshape(-1, 1), y, f"toy-{spec.case}-ood")


def load_csv(path, target_column):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if target_column not in header:
            raise DataError(f"{path}: target column {target_column!r} not in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {col!r}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno}, column {col!r}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    t = header.index(target_column)
    keep = [i for i in range(len(header)) if i != t]
    if not keep:
        raise DataError(f"{path}: no feature columns besides the target")
    return Dataset(table[:, keep], table[:, t], path.stem)


def save_csv(data, path, feature_names=None, target_name="y"):
    names = feature_names or (["x"] if data.n_features == 1 else [f"x{i}" for i in range(data.n_features)])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, target_name])
        for xi, yi in zip(data.features, data.targets):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def _column_stats(a):
    mean = a.mean(axis=0)
    std = a.std(axis=0)  # population convention
    return mean, np.where(std > 0, std, 1.0)


def fit_scaler(train):
    if len(train) < 2:
        raise DataError("standardize needs at least 2 rows")
    fm, fs = _column_stats(train.features)
    tm, ts = _column_stats(train.targets)
    return Scaler(fm, fs, float(tm), float(ts))


def standardize(train):
    """Z-score features and targets with train statistics; returns ``(data, scaler)``."""
    scaler = fit_scaler(train)
    return scaler.apply(train), scaler


def split_folds(data, n_folds, train_fraction, seed):
    """Independent seeded shuffles, each cut at ``floor(train_fraction * N)``."""
    if n_folds < 1:
        raise DataError(f"n_folds must be >= 1, got {n_folds}")
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(data) if not isinstance(data, int) else data
    cut = int(math.floor(train_fraction * n))
    if cut < 1 or cut >= n:
        raise DataError(f"fold split of N={n} at fraction {train_fraction} leaves an empty side")
    folds = []
    for f in range(n_folds):
        perm = derive_rng(seed, STREAM_FOLDS, f).permutation(n)
        folds.append((np.sort(perm[:cut]), np.sort(perm[cut:])))
    return folds
