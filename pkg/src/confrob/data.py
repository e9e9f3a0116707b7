"""Synthetic generator, ridge predictor, Energy Efficiency CSV loader, splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONTAMINATION_RATE = 0.06
CONTAMINATION_DOF = 3
CONTAMINATION_SCALE = 2.0
ENERGY_FEATURES = (
    "relative_compactness",
    "surface_area",
    "wall_area",
    "roof_area",
    "overall_height",
    "orientation",
    "glazing_area",
    "glazing_area_distribution",
)
ENERGY_TARGETS = ("heating_load", "cooling_load")


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    provenance: str = "synthetic"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, float))
        self.Y = np.asarray(self.Y, float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("dataset entries must be finite")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.Y.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], self.provenance, self.seed, dict(self.meta))


def root_covariance(d: int) -> np.ndarray:
    """Fixed anisotropic noise factor; ``[[1, 0], [0.6, 0.8]]`` for ``d = 2``.

    Larger ``d`` keeps the banded pattern: diagonal alternating 1.0/0.8,
    sub-diagonal 0.6.
    """
    L = np.zeros((d, d))
    for j in range(d):
        L[j, j] = 1.0 if j % 2 == 0 else 0.8
        if j > 0:
            L[j, j - 1] = 0.6
    return L


def synthetic_mean(X: np.ndarray, d: int = 2) -> np.ndarray:
    X = np.atleast_2d(X)
    cols = [0.75 * X[:, 0] + 0.35 * np.sin(X[:, 1]) - 0.20 * X[:, 2]]
    # outputs 2..d share the second output's form with indices rotated
    for j in range(1, d):
        o = j - 1
        a, b, c = o % 4, (1 + o) % 4, (3 + o) % 4
        cols.append(-0.45 * X[:, a] + 0.55 * X[:, b] ** 2 + 0.30 * X[:, c])
    return np.column_stack(cols)


def sigmoid(t):
    return 1.0 / (1.0 + np.exp(-t))


def gen_synthetic(n: int, d: int = 2, seed: int = 0) -> Dataset:
    """Heteroscedastic nonlinear model with 6% heavy-tailed contamination."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if d < 1:
        raise ValueError(f"d must be positive, got {d}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 4))
    base = rng.standard_normal((n, d))
    flags = rng.random(n) < CONTAMINATION_RATE
    heavy = CONTAMINATION_SCALE * rng.standard_t(CONTAMINATION_DOF, size=(n, d))
    base[flags] = heavy[flags]
    scale = 0.80 + 0.45 * sigmoid(X[:, 0])
    noise = scale[:, None] * (base @ root_covariance(d).T)
    Y = synthetic_mean(X, d) + noise
    return Dataset(X, Y, "synthetic", seed, {"contaminated": int(flags.sum())})


def feature_map(X) -> np.ndarray:
    """``[1, x, x_1^2, x_2^2, sin x_1, sin x_2]``."""
    X = np.atleast_2d(np.asarray(X, float))
    x1, x2 = X[:, 0], X[:, 1]
    return np.column_stack([np.ones(len(X)), X, x1**2, x2**2, np.sin(x1), np.sin(x2)])


@dataclass
class RidgePredictor:
    weights: np.ndarray
    lam: float = 1e-3

    def predict(self, X) -> np.ndarray:
        return feature_map(X) @ self.weights

    __call__ = predict

    def residuals(self, ds: Dataset) -> np.ndarray:
        return ds.Y - self.predict(ds.X)


def ridge_fit(train: Dataset, lam: float = 1e-3) -> RidgePredictor:
    """Closed-form ridge on the feature map; the intercept is penalised too."""
    Phi = feature_map(train.X)
    if len(train) < Phi.shape[1]:
        raise ValueError(
            f"ridge_fit needs at least {Phi.shape[1]} rows, got {len(train)}"
        )
    G = Phi.T @ Phi + lam * np.eye(Phi.shape[1])
    w = np.linalg.solve(G, Phi.T @ train.Y)
    return RidgePredictor(w, lam)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_energy(path) -> Dataset:
    """Read the Energy Efficiency table from CSV (8 features, 2 targets).

    An optional header row is detected by a non-numeric first field.
    Features are returned raw; see :class:`Standardizer`.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"energy data file not found: {path}")
    X, Y = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not f.strip() for f in row):
                continue
            if lineno == 1 and not _is_number(row[0].strip()):
                continue
            if len(row) != 10:
                raise DataFormatError(f"{path}: row {lineno} has {len(row)} fields, expected 10")
            try:
                vals = [float(f) for f in row]
            except ValueError as exc:
                raise DataFormatError(f"{path}: row {lineno} is not numeric: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataFormatError(f"{path}: row {lineno} contains non-finite values")
            X.append(vals[:8])
            Y.append(vals[8:])
    if not X:
        raise DataFormatError(f"{path}: no data rows")
    return Dataset(np.array(X), np.array(Y), "energy", None, {"path": str(path)})


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.atleast_2d(np.asarray(X, float))
        std = X.std(axis=0)
        std[std == 0] = 1.0
        return cls(X.mean(axis=0), std)

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, float) - self.mean) / self.std

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, float) * self.std + self.mean


def write_csv(ds: Dataset, path) -> None:
    path = Path(path)
    header = [f"x{j + 1}" for j in range(ds.p)] + [f"y{j + 1}" for j in range(ds.d)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, y in zip(ds.X, ds.Y):
            w.writerow([repr(float(v)) for v in np.r_[x, y]])


def read_csv(path, d: int = 2) -> Dataset:
    """Read a CSV written by :func:`write_csv`; the last ``d`` columns are outcomes."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1 and row and not _is_number(row[0].strip()):
                continue
            try:
                rows.append([float(f) for f in row])
            except ValueError as exc:
                raise DataFormatError(f"{path}: row {lineno} is not numeric: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    A = np.array(rows)
    return Dataset(A[:, :-d], A[:, -d:], "csv", None, {"path": str(path)})


@dataclass(frozen=True)
class Splits:
    train: np.ndarray
    learn: np.ndarray
    cal: np.ndarray
    test: np.ndarray

    def sizes(self) -> tuple[int, int, int, int]:
        return (len(self.train), len(self.learn), len(self.cal), len(self.test))


def split_sizes(n: int, sizes=None, fractions=None) -> tuple[int, int, int, int]:
    if (sizes is None) == (fractions is None):
        raise ValueError("give exactly one of sizes or fractions")
    if sizes is not None:
        out = tuple(int(s) for s in sizes)
        if len(out) != 4 or any(s < 0 for s in out):
            raise ValueError(f"sizes must be four nonnegative counts, got {sizes}")
        if sum(out) > n:
            raise ValueError(f"requested {sum(out)} rows but dataset has {n}")
        return out
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 4 or any(f < 0 for f in fr) or sum(fr) > 1.0 + 1e-9:
        raise ValueError(f"fractions must be four nonnegative values summing to <= 1, got {fractions}")
    return tuple(int(math.floor(f * n + 1e-9)) for f in fr)


def make_splits(n: int, sizes=None, fractions=None, seed: int = 0) -> Splits:
    """Seeded shuffle followed by contiguous train/learn/cal/test blocks."""
    counts = split_sizes(n, sizes, fractions)
    perm = np.random.default_rng(seed).permutation(n)
    edges = np.cumsum((0,) + counts)
    parts = [np.sort(perm[edges[i]:edges[i + 1]]) for i in range(4)]
    return Splits(*parts)
