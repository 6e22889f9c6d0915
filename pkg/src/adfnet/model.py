"""Lightweight probabilistic MLP: configuration, parameters and forward passes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .errors import ConfigurationError, LoadError
from .gauss import GaussianTensor, filter_dense, filter_dropout, filter_leaky_relu

BETA_FLOOR = 1e-8
PARAMS_FORMAT = "adfnet-params"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    widths: tuple = (18, 256, 128, 16, 1)
    leaky_slope: float = 0.01
    dropout: float = 0.3
    delta: float = 0.01
    k: float = 0.5
    lam: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2 or self.widths[-1] != 1 or min(self.widths) < 1:
            raise ConfigurationError(f"widths must be positive and end in 1, got {self.widths}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ConfigurationError(f"leaky slope must lie in [0, 1), got {self.leaky_slope}")
        if self.delta <= 0:
            raise ConfigurationError("delta must be positive")
        if not 0.0 < self.k <= 1.0:
            raise ConfigurationError("k must lie in (0, 1]")
        if self.lam < 0:
            raise ConfigurationError("lam must be non-negative")

    @property
    def n_inputs(self) -> int:
        return self.widths[0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Parameters:
    """Dense-layer weights ``(out, in)`` and biases ``(out,)``, first layer first."""

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def flat(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_flat(cls, arrays) -> "Parameters":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2])

    def as_leaves(self) -> "Parameters":
        return Parameters.from_flat(ad.leaf(a) for a in self.flat())

    def values(self) -> "Parameters":
        return Parameters.from_flat(ad.value_of(a).copy() for a in self.flat())

    def shapes(self) -> list:
        return [ad.shape_of(a) for a in self.flat()]

    def equals(self, other: "Parameters") -> bool:
        a, b = self.flat(), other.flat()
        return len(a) == len(b) and all(np.array_equal(ad.value_of(x), ad.value_of(y)) for x, y in zip(a, b))


@dataclass
class PredictiveDistribution:
    mean: object
    variance: object


def init_params(config: NetworkConfig) -> Parameters:
    """Glorot-uniform weights, zero biases, reproducible from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(config.widths[:-1], config.widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Parameters(weights, biases)


def _check_params(params: Parameters, config: NetworkConfig):
    expected = []
    for fan_in, fan_out in zip(config.widths[:-1], config.widths[1:]):
        expected.extend([(fan_out, fan_in), (fan_out,)])
    if params.shapes() != expected:
        raise ConfigurationError(f"parameter shapes {params.shapes()} do not match widths {config.widths}")


def _squeeze_output(x, batched):
    return ad.reshape(x, (ad.shape_of(x)[0],)) if batched else ad.reshape(x, ())


def input_distribution(x, config: NetworkConfig, sigma=None) -> GaussianTensor:
    """Input Gaussian with means ``x`` and variances ``sigma`` (default: ``delta`` everywhere)."""
    if sigma is None:
        sigma = np.full(ad.shape_of(x), config.delta)
    elif np.ndim(ad.value_of(sigma)) < len(ad.shape_of(x)):
        sigma = ad.broadcast_to(sigma, ad.shape_of(x))
    return GaussianTensor(x, sigma)


def forward(params: Parameters, config: NetworkConfig, inputs: GaussianTensor,
            train_mode: bool = False, mask_source=None):
    """Filter ``inputs`` through the network.

    Returns the predictive distribution and the list of per-layer Gaussian
    activations (input first).
    """
    if inputs.size != config.n_inputs:
        raise ConfigurationError(f"expected {config.n_inputs} inputs, got {inputs.size}")
    batched = len(ad.shape_of(inputs.means)) == 2
    g = inputs
    trace = [g]
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        g = filter_dense(g, w, b)
        if i < n_layers - 1:
            g = filter_leaky_relu(g, config.leaky_slope)
            if train_mode and config.dropout > 0:
                g = filter_dropout(g, config.dropout, mask_source, train_mode=True)
        trace.append(g)
    mean = _squeeze_output(g.means, batched)
    variance = ad.clamp_min(_squeeze_output(g.variances, batched), BETA_FLOOR)
    return PredictiveDistribution(mean, variance), trace


def forward_deterministic(params: Parameters, config: NetworkConfig, x,
                          train_mode: bool = False, rng=None):
    """Ordinary network output; dropout (inverted) only in ``train_mode``."""
    if ad.shape_of(x)[-1] != config.n_inputs:
        raise ConfigurationError(f"expected {config.n_inputs} inputs, got {ad.shape_of(x)[-1]}")
    batched = len(ad.shape_of(x)) == 2
    h = x
    n_layers = len(params.weights)
    p = config.dropout
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add(ad.matmul(h, ad.transpose(w)), b)
        if i < n_layers - 1:
            h = ad.leaky_relu(h, config.leaky_slope)
            if train_mode and p > 0:
                mask = (rng.random(ad.shape_of(h)) >= p).astype(np.float64)
                h = ad.mul(h, mask / (1.0 - p))
    return _squeeze_output(h, batched)


def predict(params: Parameters, config: NetworkConfig, X, sigma=None):
    """Evaluation-mode prediction means and variances for raw arrays."""
    pred, _ = forward(params, config, input_distribution(np.asarray(X, dtype=np.float64), config, sigma))
    return pred.mean, pred.variance


# -- persistence ----------------------------------------------------------


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_params(path, params: Parameters, config: NetworkConfig, extra: dict | None = None):
    """Write parameters as JSON; floats are stored with round-trip precision."""
    doc = {
        "format": PARAMS_FORMAT,
        "version": PARAMS_VERSION,
        "library_version": __version__,
        "config_hash": config.fingerprint(),
        "seed": config.seed,
        "network": config.to_dict(),
        "layers": [
            {
                "shape": list(np.shape(w)),
                "weight": [float(v) for v in np.ravel(ad.value_of(w), order="C")],
                "bias": [float(v) for v in ad.value_of(b)],
            }
            for w, b in zip(params.weights, params.biases)
        ],
    }
    if extra:
        doc["extra"] = extra
    atomic_write_text(path, json.dumps(doc))


def load_params(path, config: NetworkConfig | None = None):
    """Read a parameter file; returns ``(params, config, extra)``.

    If ``config`` is given its fingerprint must match the file's.
    """
    path = Path(path)
    if not path.exists():
        raise LoadError(f"no parameter file at {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise LoadError(f"{path} is not a valid parameter file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != PARAMS_FORMAT or doc.get("version") != PARAMS_VERSION:
        raise LoadError(f"{path}: unrecognised header")
    try:
        stored = NetworkConfig(**{**doc["network"], "widths": tuple(doc["network"]["widths"])})
        if stored.fingerprint() != doc["config_hash"]:
            raise LoadError(f"{path}: config hash does not match stored network")
        weights, biases = [], []
        for layer in doc["layers"]:
            w = np.array(layer["weight"], dtype=np.float64).reshape(layer["shape"])
            weights.append(w)
            biases.append(np.array(layer["bias"], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"{path}: malformed parameter file: {exc}") from exc
    params = Parameters(weights, biases)
    try:
        _check_params(params, stored)
    except ConfigurationError as exc:
        raise LoadError(str(exc)) from exc
    if config is not None and config.fingerprint() != stored.fingerprint():
        raise LoadError(f"{path} was trained with config {stored.fingerprint()}, expected {config.fingerprint()}")
    return params, stored, doc.get("extra", {})
