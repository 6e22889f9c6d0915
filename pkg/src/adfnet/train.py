"""Adam optimisation, two-phase training, cross-validation and metrics."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Dataset, compute_stats, standardize
from .errors import ConfigurationError, TrainingDivergedError, UndefinedMetricError
from .model import (
    NetworkConfig,
    Parameters,
    PredictiveDistribution,
    forward,
    forward_deterministic,
    init_params,
    input_distribution,
    predict,
)
from .objectives import mean_nll, nll_loss, regularized_loss

log = logging.getLogger(__name__)

MODES = ("lpn", "dnn")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 64
    epochs: int = 300
    refine_epochs: int = 100
    refine: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    folds: int = 5
    seed: int = 0
    mode: str = "lpn"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")
        if self.epochs < 0 or self.refine_epochs < 0:
            raise ConfigurationError("epoch counts must be non-negative")
        if self.epochs + (self.refine_epochs if self.refine else 0) < 1:
            raise ConfigurationError("at least one training epoch is required")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be at least 1")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns new parameter list and state."""
    t = state.t + 1
    new_params, new_m, new_v = [], [], []
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        new_params.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def r_squared(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape or targets.size < 2:
        raise UndefinedMetricError("R^2 needs two or more paired values")
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 is undefined for constant targets")
    return 1.0 - float(np.sum((targets - predictions) ** 2)) / ss_tot


@dataclass
class TrainReport:
    mode: str
    network: dict
    train: dict
    config_hash: str
    epochs: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    def payload(self) -> dict:
        """Everything except timing, which varies between identical runs."""
        d = asdict(self)
        d.pop("wall_clock_seconds")
        return d


def predict_mean(params: Parameters, config: NetworkConfig, X, mode: str) -> np.ndarray:
    if mode == "dnn":
        return np.asarray(forward_deterministic(params, config, np.asarray(X, dtype=np.float64)))
    return predict(params, config, X)[0]


def evaluate(params: Parameters, config: NetworkConfig, X, y, mode: str = "lpn") -> dict:
    """Validation loss, R^2 and RMSE (standardised target units)."""
    if mode == "dnn":
        mu = predict_mean(params, config, X, mode)
        loss = float(np.mean((y - mu) ** 2))
    else:
        mu, var = predict(params, config, X)
        loss = float(np.mean(nll_loss(y, PredictiveDistribution(mu, var), config.k)))
    return {
        "loss": loss,
        "r2": r_squared(mu, y),
        "rmse": float(np.sqrt(np.mean((y - mu) ** 2))),
    }


def _batch_loss(leaves, X, y, config, mode, refine, rng):
    params = Parameters.from_flat(leaves)
    if mode == "dnn":
        out = forward_deterministic(params, config, X, train_mode=True, rng=rng)
        return ad.mean(ad.square(ad.sub(y, out)))
    if refine:
        return regularized_loss(X, y, params, config, train_mode=True, rng=rng)
    pred, _ = forward(params, config, input_distribution(X, config), True, rng)
    return mean_nll(y, pred, config.k)


def train(train_set: Dataset, val_set: Dataset | None, net: NetworkConfig, cfg: TrainConfig,
          params: Parameters | None = None):
    """Fit the network on standardised data.

    Phase 1 minimises the likelihood loss for ``cfg.epochs`` epochs. If
    ``cfg.refine`` is set, phase 2 continues from the phase-1 parameters
    (and optimiser state) for ``cfg.refine_epochs`` epochs on the
    relevance-entropy regularised objective; ``epochs = 0`` gives one-phase
    training on the regularised objective from initialisation. The ``dnn`` mode trains the
    deterministic baseline on mean squared error over the same epoch budget.

    Returns ``(report, params)``.
    """
    if train_set.d != net.n_inputs:
        raise ConfigurationError(f"network expects {net.n_inputs} features, data has {train_set.d}")
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    arrays = (params or init_params(net)).values().flat()
    state = AdamState.zeros_like(arrays)
    report = TrainReport(cfg.mode, net.to_dict(), cfg.to_dict(), net.fingerprint())
    phases = [(1, cfg.epochs, False)]
    if cfg.refine:
        phases.append((2, cfg.refine_epochs, cfg.mode == "lpn"))
    X, y = train_set.X, train_set.y
    n = train_set.n
    epoch_index = 0
    for phase, n_epochs, refine in phases:
        for _ in range(n_epochs):
            epoch_index += 1
            order = rng.permutation(n)
            total = 0.0
            for b, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                leaves = [ad.leaf(a) for a in arrays]
                loss = _batch_loss(leaves, X[idx], y[idx], net, cfg.mode, refine, rng)
                value = float(ad.value_of(loss))
                if not np.isfinite(value):
                    raise TrainingDivergedError(
                        f"non-finite loss in phase {phase}, epoch {epoch_index}, batch {b}"
                    )
                grads = ad.gradient(loss, leaves)
                if not all(np.all(np.isfinite(g)) for g in grads):
                    raise TrainingDivergedError(
                        f"non-finite gradient in phase {phase}, epoch {epoch_index}, batch {b}"
                    )
                arrays, state = adam_step(arrays, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
                total += value * len(idx)
            row = {"epoch": epoch_index, "phase": phase, "train_loss": total / n}
            if val_set is not None:
                metrics = evaluate(Parameters.from_flat(arrays), net, val_set.X, val_set.y, cfg.mode)
                row.update(val_loss=metrics["loss"], val_r2=metrics["r2"], val_rmse=metrics["rmse"])
            report.epochs.append(row)
            log.debug("epoch %s", row)
    final = Parameters.from_flat(arrays)
    if val_set is not None:
        report.final = evaluate(final, net, val_set.X, val_set.y, cfg.mode)
    report.final["train_loss"] = report.epochs[-1]["train_loss"]
    report.wall_clock_seconds = time.perf_counter() - started
    return report, final


def fold_indices(n: int, folds: int, seed: int) -> list:
    if folds < 2:
        raise ConfigurationError("cross-validation needs at least 2 folds")
    if folds > n:
        raise ConfigurationError(f"cannot make {folds} folds from {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


@dataclass
class FoldResult:
    index: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    report: TrainReport
    params: Parameters
    train_set: Dataset
    val_set: Dataset


@dataclass
class CrossValidation:
    folds: list

    @property
    def r2(self) -> np.ndarray:
        return np.array([f.report.final["r2"] for f in self.folds])

    def aggregate(self) -> dict:
        r2 = self.r2
        return {"r2_mean": float(r2.mean()), "r2_std": float(r2.std()), "r2_per_fold": r2.tolist()}


def cross_validate(ds: Dataset, net: NetworkConfig, cfg: TrainConfig, folds: int | None = None,
                   seed: int | None = None) -> CrossValidation:
    """K-fold CV on raw data; each fold is standardised with its own train statistics."""
    k = folds or cfg.folds
    parts = fold_indices(ds.n, k, cfg.seed if seed is None else seed)
    results = []
    for i, val_idx in enumerate(parts):
        train_idx = np.sort(np.concatenate([p for j, p in enumerate(parts) if j != i]))
        raw_train = ds.subset(train_idx)
        stats = compute_stats(raw_train)
        train_set = standardize(raw_train, stats)
        val_set = standardize(ds.subset(val_idx), stats)
        report, params = train(train_set, val_set, net, cfg)
        log.info("fold %d: val R2 %.4f", i, report.final["r2"])
        results.append(FoldResult(i, train_idx, val_idx, report, params, train_set, val_set))
    return CrossValidation(results)
