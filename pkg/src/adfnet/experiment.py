"""Experiment commands: configuration, reports and the masking sweep.

A config file is TOML with four tables::

    [network]   hidden, leaky_slope, dropout, delta, k, lam, seed
    [train]     lr, batch_size, epochs, refine_epochs, refine, beta1, beta2,
                eps, folds, seed, mode
    [data]      dataset, path, schema, split_fraction, seed, n
    [gap]       factors, lr, max_iter, tol, warm_start, samples

Every command writes one JSON report::

    {"command": ..., "library_version": ..., "experiment_hash": ...,
     "seed": ..., "payload": {...}, "meta": {"created": ..., ...}}

``payload`` is deterministic for fixed seeds; ``meta`` holds timestamps and
timings.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .data import (
    BUILTIN_SCHEMAS,
    SYNTHETIC_KINDS,
    Dataset,
    load_csv,
    load_schema_file,
    make_synthetic,
    prepare,
)
from .errors import ConfigurationError
from .model import NetworkConfig, Parameters, atomic_write_text, load_params, save_params
from .objectives import relevance
from .plots import gap_svg, mask_sweep_svg, relevance_svg
from .train import TrainConfig, cross_validate, evaluate, predict_mean, r_squared, train
from .uq import DEFAULT_FACTORS, gap_scores


@dataclass(frozen=True)
class DataSection:
    dataset: str = "linear-1d"
    path: str | None = None
    schema: str | None = None
    split_fraction: float = 0.8
    seed: int = 0
    n: int = 2000


@dataclass(frozen=True)
class GapSection:
    factors: tuple = DEFAULT_FACTORS
    lr: float = 0.01
    max_iter: int = 500
    tol: float = 0.01
    warm_start: bool = True
    samples: tuple = (0,)


@dataclass(frozen=True)
class ExperimentConfig:
    network: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    gap: GapSection = field(default_factory=GapSection)
    base_dir: str = "."

    def network_config(self, n_inputs: int) -> NetworkConfig:
        net = dict(self.network)
        hidden = tuple(net.pop("hidden", (256, 128, 16)))
        return NetworkConfig(widths=(n_inputs, *hidden, 1), **net)

    def to_dict(self) -> dict:
        return {
            "network": dict(self.network),
            "train": self.train.to_dict(),
            "data": asdict(self.data),
            "gap": {**asdict(self.gap), "factors": list(self.gap.factors), "samples": list(self.gap.samples)},
        }

    def fingerprint(self) -> str:
        """Identity of the data and models; the baseline and LPN runs share it."""
        d = self.to_dict()
        d.pop("gap")
        d["train"].pop("mode")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, dataset: str | None = None,
                       mode: str | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(
                cfg,
                network={**cfg.network, "seed": seed},
                train=replace(cfg.train, seed=seed),
                data=replace(cfg.data, seed=seed),
            )
        if dataset is not None and dataset != cfg.data.dataset:
            cfg = replace(cfg, data=replace(cfg.data, dataset=dataset, path=None))
        if mode is not None:
            cfg = replace(cfg, train=replace(cfg.train, mode=mode))
        return cfg


_NETWORK_KEYS = {"hidden", "leaky_slope", "dropout", "delta", "k", "lam", "seed"}


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    unknown = set(doc) - {"network", "train", "data", "gap"}
    if unknown:
        raise ConfigurationError(f"{path}: unknown sections {sorted(unknown)}")
    network = dict(doc.get("network", {}))
    if set(network) - _NETWORK_KEYS:
        raise ConfigurationError(f"{path}: unknown [network] keys {sorted(set(network) - _NETWORK_KEYS)}")
    if "hidden" in network:
        network["hidden"] = [int(h) for h in network["hidden"]]
    try:
        gap = dict(doc.get("gap", {}))
        for key in ("factors", "samples"):
            if key in gap:
                gap[key] = tuple(gap[key])
        cfg = ExperimentConfig(
            network=network,
            train=TrainConfig(**doc.get("train", {})),
            data=DataSection(**doc.get("data", {})),
            gap=GapSection(**gap),
            base_dir=str(path.parent),
        )
    except TypeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    cfg.network_config(1)  # validates the [network] values
    return cfg


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    data = cfg.data
    if data.dataset in SYNTHETIC_KINDS:
        return make_synthetic(data.dataset, seed=data.seed, n=data.n)
    schemas = dict(BUILTIN_SCHEMAS)
    if data.schema:
        schemas.update(load_schema_file(Path(cfg.base_dir) / data.schema))
    if data.dataset not in schemas:
        raise ConfigurationError(f"unknown dataset {data.dataset!r}")
    schema = schemas[data.dataset]
    if data.path:
        path = Path(data.path)
        if not path.is_absolute():
            path = Path(cfg.base_dir) / path
    else:
        path = data_dir() / (schema.filename or f"{schema.name}.csv")
    return load_csv(path, schema.target, schema.drop, provenance=f"{schema.name}:{path.name}")


def data_dir() -> Path:
    """Where named datasets live unless a config gives an explicit path."""
    return Path(os.environ.get("ADFNET_DATA_DIR", "data"))


def load_splits(cfg: ExperimentConfig):
    ds = load_dataset(cfg)
    train_set, val_set = prepare(ds, cfg.data.split_fraction, cfg.data.seed)
    return ds, train_set, val_set


# -- reports --------------------------------------------------------------


def make_report(command: str, cfg: ExperimentConfig, payload: dict, meta: dict | None = None) -> dict:
    return {
        "command": command,
        "library_version": __version__,
        "experiment_hash": cfg.fingerprint(),
        "seed": cfg.train.seed,
        "payload": payload,
        "meta": {"created": dt.datetime.now(dt.timezone.utc).isoformat(), **(meta or {})},
    }


def write_report(path, report: dict):
    atomic_write_text(path, json.dumps(report, indent=2, sort_keys=True) + "\n")


def read_report(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"report not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def params_path(out, mode: str) -> Path:
    return Path(out) / f"params_{mode}.json"


def _load_trained(cfg: ExperimentConfig, path, n_inputs: int):
    params, net, extra = load_params(path, cfg.network_config(n_inputs))
    if extra.get("experiment_hash") != cfg.fingerprint():
        raise ConfigurationError(
            f"{path} was produced by experiment {extra.get('experiment_hash')}, "
            f"this config is {cfg.fingerprint()}"
        )
    return params, net, extra


# -- commands -------------------------------------------------------------


def cmd_prep(cfg: ExperimentConfig, out) -> dict:
    ds, train_set, val_set = load_splits(cfg)
    payload = {
        "dataset": cfg.data.dataset,
        "provenance": ds.provenance,
        "n": ds.n,
        "d": train_set.d,
        "features": list(train_set.names),
        "rejected_rows": ds.rejected_rows,
        "n_train": train_set.n,
        "n_validation": val_set.n,
        "stats": train_set.stats.to_dict(),
    }
    report = make_report("prep", cfg, payload)
    write_report(Path(out) / "prep_report.json", report)
    return report


def cmd_train(cfg: ExperimentConfig, out, folds: int | None = None) -> dict:
    """Train one model (or run K-fold CV when ``folds`` is given)."""
    started = time.perf_counter()
    mode = cfg.train.mode
    if folds:
        ds = load_dataset(cfg)
        net = cfg.network_config(ds.d)
        cv = cross_validate(ds, net, cfg.train, folds=folds, seed=cfg.data.seed)
        payload = {
            "mode": mode,
            "folds": folds,
            "aggregate": cv.aggregate(),
            "per_fold": [f.report.payload() for f in cv.folds],
        }
        report = make_report("train-cv", cfg, payload, {"wall_clock_seconds": time.perf_counter() - started})
        write_report(Path(out) / f"cv_report_{mode}.json", report)
        return report
    ds, train_set, val_set = load_splits(cfg)
    net = cfg.network_config(train_set.d)
    train_report, params = train(train_set, val_set, net, cfg.train)
    extra = {"experiment_hash": cfg.fingerprint(), "mode": mode, "stats": train_set.stats.to_dict()}
    save_params(params_path(out, mode), params, net, extra)
    report = make_report("train", cfg, train_report.payload(),
                         {"wall_clock_seconds": train_report.wall_clock_seconds})
    write_report(Path(out) / f"train_report_{mode}.json", report)
    return report


def cmd_evaluate(cfg: ExperimentConfig, out, params_file=None) -> dict:
    _, train_set, val_set = load_splits(cfg)
    mode = cfg.train.mode
    params, net, _ = _load_trained(cfg, params_file or params_path(out, mode), train_set.d)
    payload = {"mode": mode, "validation": evaluate(params, net, val_set.X, val_set.y, mode)}
    report = make_report("evaluate", cfg, payload)
    write_report(Path(out) / f"evaluate_report_{mode}.json", report)
    return report


def mean_relevance(method: str, params: Parameters, net: NetworkConfig, X) -> np.ndarray:
    return relevance(method, params, net, X).mean().scores


def cmd_relevance(cfg: ExperimentConfig, out, method: str, params_file=None) -> dict:
    if method not in ("lpn", "gs", "std"):
        raise ConfigurationError(f"unknown relevance method {method!r}")
    _, train_set, val_set = load_splits(cfg)
    mode = "lpn" if method == "lpn" else "dnn"
    params, net, _ = _load_trained(cfg, params_file or params_path(out, mode), train_set.d)
    scores = mean_relevance(method, params, net, val_set.X)
    order = np.argsort(-scores, kind="stable")
    payload = {
        "method": method,
        "model": mode,
        "features": [train_set.names[i] for i in order],
        "scores": [float(scores[i]) for i in order],
        "by_feature": {n: float(s) for n, s in zip(train_set.names, scores)},
    }
    report = make_report("relevance", cfg, payload)
    out = Path(out)
    write_report(out / f"relevance_{method}.json", report)
    atomic_write_text(out / f"relevance_{method}.svg", relevance_svg(payload))
    return report


@dataclass
class MaskSweep:
    method: str
    order: str
    features: list
    r2: list
    auc: float

    def to_dict(self) -> dict:
        return asdict(self)


def mask_sweep(params: Parameters, net: NetworkConfig, val_set: Dataset, medians, ranking,
               mode: str = "lpn", order: str = "ascending", method: str = "lpn") -> MaskSweep:
    """R^2 on ``val_set`` as features are replaced, one more at a time, by train medians.

    ``ranking`` lists feature names from most to least relevant; ``order``
    ``"ascending"`` masks the least relevant first.
    """
    if order not in ("ascending", "descending"):
        raise ConfigurationError("order must be 'ascending' or 'descending'")
    names = list(ranking)[::-1] if order == "ascending" else list(ranking)
    cols = [val_set.names.index(n) for n in names]
    X = val_set.X.copy()
    r2 = [r_squared(predict_mean(params, net, X, mode), val_set.y)]
    for c in cols:
        X[:, c] = medians[c]
        r2.append(r_squared(predict_mean(params, net, X, mode), val_set.y))
    return MaskSweep(method, order, names, r2, float(np.trapezoid(r2)))


def cmd_mask_sweep(cfg: ExperimentConfig, out, ranking_file, params_file=None,
                   order: str = "ascending") -> dict:
    ranking = read_report(ranking_file)
    if ranking.get("experiment_hash") != cfg.fingerprint():
        raise ConfigurationError(
            f"ranking {ranking_file} comes from experiment {ranking.get('experiment_hash')}, "
            f"this config is {cfg.fingerprint()}"
        )
    method = ranking["payload"]["method"]
    mode = ranking["payload"]["model"]
    _, train_set, val_set = load_splits(cfg)
    params, net, _ = _load_trained(cfg, params_file or params_path(out, mode), train_set.d)
    sweep = mask_sweep(params, net, val_set, train_set.stats.standardized_median,
                       ranking["payload"]["features"], mode, order, method)
    payload = sweep.to_dict()
    report = make_report("mask-sweep", cfg, payload)
    out = Path(out)
    write_report(out / f"mask_sweep_{method}_{order}.json", report)
    atomic_write_text(out / f"mask_sweep_{method}_{order}.svg", mask_sweep_svg(payload))
    return report


def cmd_gap(cfg: ExperimentConfig, out, samples=None, factors=None, params_file=None) -> dict:
    samples = list(cfg.gap.samples if samples is None else samples)
    factors = tuple(cfg.gap.factors if factors is None else factors)
    _, train_set, val_set = load_splits(cfg)
    for s in samples:
        if not 0 <= s < val_set.n:
            raise ConfigurationError(f"unknown sample id {s}; validation split has {val_set.n} samples")
    params, net, _ = _load_trained(cfg, params_file or params_path(out, "lpn"), train_set.d)
    out = Path(out)
    profiles = []
    for s in samples:
        profile = gap_scores(params, net, val_set.X[s], factors, warm_start=cfg.gap.warm_start,
                             lr=cfg.gap.lr, max_iter=cfg.gap.max_iter, tol=cfg.gap.tol)
        entry = {
            "sample": s,
            "target": float(val_set.y[s]),
            "features": list(train_set.names),
            "profile": profile.to_dict(),
            "all_converged": all(profile.converged),
        }
        profiles.append(entry)
        atomic_write_text(out / f"gap_sample_{s}.svg", gap_svg(entry))
    payload = {"factors": list(factors), "samples": profiles}
    report = make_report("gap", cfg, payload)
    write_report(out / "gap_report.json", report)
    return report

