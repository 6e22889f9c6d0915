"""Dataset ingestion, standardisation, splitting and synthetic fixtures.

Real datasets are read from user-supplied CSV files; nothing is downloaded.

* Parkinsons Telemonitoring: ``parkinsons_updrs.data`` from the UCI
  repository (comma separated, header row).
* Appliances Energy Prediction: ``energydata_complete.csv`` from the UCI
  repository.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
import tomli

from .errors import ConfigurationError, IngestionError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetSchema:
    name: str
    target: str
    drop: tuple = ()
    split_fraction: float = 0.8
    seed: int = 0
    filename: str | None = None


BUILTIN_SCHEMAS = {
    "parkinsons": DatasetSchema(
        "parkinsons",
        target="total_UPDRS",
        drop=("subject#", "test_time", "motor_UPDRS"),
        filename="parkinsons_updrs.data",
    ),
    "energy": DatasetSchema(
        "energy",
        target="Appliances",
        drop=("date",),
        filename="energydata_complete.csv",
    ),
}

SYNTHETIC_KINDS = ("linear-1d", "linear-2d-dead-feature", "noisy-feature")


@dataclass
class FeatureStats:
    """Train-split statistics in raw units."""

    names: tuple
    mean: np.ndarray
    std: np.ndarray
    median: np.ndarray
    y_mean: float
    y_std: float

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def inverse(self, Z):
        return np.asarray(Z) * self.std + self.mean

    def transform_target(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def inverse_target(self, z):
        return np.asarray(z) * self.y_std + self.y_mean

    @property
    def standardized_median(self) -> np.ndarray:
        return (self.median - self.mean) / self.std

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "median": self.median.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
        }


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    names: tuple
    provenance: str = ""
    rejected_rows: int = 0
    stats: FeatureStats | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.names = tuple(self.names)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0] or self.X.shape[1] != len(self.names):
            raise ConfigurationError(f"inconsistent dataset shapes X{self.X.shape} y{self.y.shape}")
        if len(set(self.names)) != len(self.names):
            raise ConfigurationError("feature names must be unique")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx])


def load_csv(path, target: str, drop=(), provenance: str | None = None) -> Dataset:
    """Parse a headed CSV into a numeric dataset.

    Columns in ``drop`` are discarded; every other column except ``target``
    becomes a feature. Rows with any cell that does not parse as a number
    are rejected and counted.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, sep=",", encoding="utf-8", dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise IngestionError(f"{path} is empty") from exc
    frame.columns = [c.strip() for c in frame.columns]
    if target not in frame.columns:
        raise IngestionError(f"{path}: missing target column {target!r}")
    if frame.empty:
        raise IngestionError(f"{path} has a header but no rows")
    features = [c for c in frame.columns if c != target and c not in set(drop)]
    numeric = frame[features + [target]].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1)
    rejected = int(bad.sum())
    if rejected:
        log.warning("%s: rejected %d rows with unparseable cells", path, rejected)
    numeric = numeric[~bad]
    if numeric.empty:
        raise IngestionError(f"{path}: no parseable rows")
    return Dataset(
        numeric[features].to_numpy(dtype=np.float64),
        numeric[target].to_numpy(dtype=np.float64),
        features,
        provenance=provenance or str(path),
        rejected_rows=rejected,
    )


def load_schema_file(path) -> dict:
    """Read ``{name: DatasetSchema}`` from a TOML file with one table per dataset."""
    with open(path, "rb") as fh:
        doc = tomli.load(fh)
    schemas = {}
    for name, entry in doc.items():
        try:
            schemas[name] = DatasetSchema(
                name,
                target=entry["target"],
                drop=tuple(entry.get("drop", ())),
                split_fraction=float(entry.get("split_fraction", 0.8)),
                seed=int(entry.get("seed", 0)),
                filename=entry.get("filename"),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"schema {name!r}: {exc}") from exc
    return schemas


def load_named(name: str, path, schema: DatasetSchema | None = None) -> Dataset:
    schema = schema or BUILTIN_SCHEMAS[name]
    return load_csv(path, schema.target, schema.drop, provenance=f"{name}:{Path(path).name}")


def compute_stats(ds: Dataset) -> FeatureStats:
    return FeatureStats(
        ds.names,
        ds.X.mean(axis=0),
        ds.X.std(axis=0),
        np.median(ds.X, axis=0),
        float(ds.y.mean()),
        float(ds.y.std()),
    )


def standardize(ds: Dataset, stats: FeatureStats) -> Dataset:
    """Centre and scale features and target with (train-split) ``stats``.

    Features with zero spread in ``stats`` are dropped with a warning; the
    returned dataset carries the reduced stats.
    """
    if stats.y_std <= 0:
        raise ConfigurationError("target has zero variance on the train split")
    keep = stats.std > 0
    if not keep.all():
        dropped = [n for n, k in zip(stats.names, keep) if not k]
        warnings.warn(f"dropping constant features {dropped}", stacklevel=2)
        stats = FeatureStats(
            tuple(n for n, k in zip(stats.names, keep) if k),
            stats.mean[keep], stats.std[keep], stats.median[keep],
            stats.y_mean, stats.y_std,
        )
    col = [ds.names.index(n) for n in stats.names]
    return Dataset(
        stats.transform(ds.X[:, col]),
        stats.transform_target(ds.y),
        stats.names,
        provenance=ds.provenance,
        rejected_rows=ds.rejected_rows,
        stats=stats,
    )


def split_indices(n: int, fraction: float, seed: int):
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"split fraction must lie in (0, 1), got {fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def split(ds: Dataset, fraction: float = 0.8, seed: int = 0):
    """Shuffled train/validation split."""
    train_idx, val_idx = split_indices(ds.n, fraction, seed)
    return ds.subset(train_idx), ds.subset(val_idx)


def prepare(ds: Dataset, fraction: float = 0.8, seed: int = 0):
    """Split, then standardise both parts with train-split statistics."""
    train, val = split(ds, fraction, seed)
    stats = compute_stats(train)
    return standardize(train, stats), standardize(val, stats)


def make_synthetic(kind: str, seed: int = 0, n: int = 2000) -> Dataset:
    """Fixtures with known structure.

    linear-1d
        ``x ~ N(0, 1)``, ``y = 3x + e``, ``e ~ N(0, 0.1^2)``.
    linear-2d-dead-feature
        ``x1, x2 ~ N(0, 1)``, ``y = 3 x1 + e``, ``e ~ N(0, 0.1^2)``; x2 unused.
    noisy-feature
        four informative inputs and two pure-noise columns ``rv1``, ``rv2``:
        ``y = 2 x1 - 1.5 x2 + tanh(2 x3) + 0.5 x4 + e``.
    """
    rng = np.random.default_rng(seed)
    if kind == "linear-1d":
        X = rng.standard_normal((n, 1))
        y = 3.0 * X[:, 0] + 0.1 * rng.standard_normal(n)
        names = ("x1",)
    elif kind == "linear-2d-dead-feature":
        X = rng.standard_normal((n, 2))
        y = 3.0 * X[:, 0] + 0.1 * rng.standard_normal(n)
        names = ("x1", "x2")
    elif kind == "noisy-feature":
        X = rng.standard_normal((n, 6))
        y = 2.0 * X[:, 0] - 1.5 * X[:, 1] + np.tanh(2.0 * X[:, 2]) + 0.5 * X[:, 3]
        y = y + 0.1 * rng.standard_normal(n)
        names = ("x1", "x2", "x3", "x4", "rv1", "rv2")
    else:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    return Dataset(X, y, names, provenance=f"synthetic:{kind}:seed={seed}")
