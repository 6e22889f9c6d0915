"""Likelihood loss, relevance scores and the entropy-of-relevance penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import (
    NetworkConfig,
    Parameters,
    PredictiveDistribution,
    forward,
    forward_deterministic,
    input_distribution,
)

RESIDUAL_EPS = 1e-8
ENTROPY_EPS = 1e-12
METHODS = ("lpn", "gs", "std")


@dataclass
class RelevanceVector:
    """Per-feature scores, shape ``(d,)`` or ``(batch, d)``."""

    scores: np.ndarray
    method: str

    def mean(self) -> "RelevanceVector":
        return RelevanceVector(np.atleast_2d(self.scores).mean(axis=0), self.method)


def nll_loss(y, pred: PredictiveDistribution, k: float):
    """Per-sample ``log beta + (r^2 / beta)^k``.

    The squared residual is offset by ``RESIDUAL_EPS**2`` so that ``k = 0.5``
    (``|r|``) stays differentiable at zero.
    """
    r2 = ad.add(ad.square(ad.sub(y, pred.mean)), RESIDUAL_EPS * RESIDUAL_EPS)
    return ad.add(ad.log(pred.variance), ad.power(ad.div(r2, pred.variance), k))


def mean_nll(y, pred: PredictiveDistribution, k: float):
    return ad.mean(nll_loss(y, pred, k))


def _input_gradients(params, config, x, create_graph):
    """d(mean)/dx and d(variance)/dx per sample, evaluation mode."""
    x_node = ad.leaf(ad.value_of(x))
    pred, _ = forward(params, config, input_distribution(x_node, config))
    d_mean, = ad.gradient(ad.sum_(pred.mean), [x_node], create_graph=create_graph)
    d_var, = ad.gradient(ad.sum_(pred.variance), [x_node], create_graph=create_graph)
    return d_mean, d_var


def relevance_lpn_graph(params: Parameters, config: NetworkConfig, x):
    """Relevance scores as a recorded graph (for differentiating the penalty)."""
    x = ad.value_of(x)
    d_mean, d_var = _input_gradients(params, config, x, create_graph=True)
    return ad.add(ad.square(ad.mul(x, d_mean)), ad.square(ad.mul(x, d_var)))


def relevance_lpn(params: Parameters, config: NetworkConfig, x) -> RelevanceVector:
    """``(x_j dmean/dx_j)^2 + (x_j dvar/dx_j)^2`` with input variances at delta."""
    x = np.asarray(x, dtype=np.float64)
    d_mean, d_var = _input_gradients(params.values(), config, x, create_graph=False)
    return RelevanceVector((x * d_mean) ** 2 + (x * d_var) ** 2, "lpn")


def _deterministic_gradient(params, config, x):
    x = np.asarray(x, dtype=np.float64)
    x_node = ad.leaf(x)
    out = forward_deterministic(params.values(), config, x_node)
    grad, = ad.gradient(ad.sum_(out), [x_node])
    return x, grad


def relevance_gs(params: Parameters, config: NetworkConfig, x) -> RelevanceVector:
    """Squared input gradient of the deterministic network."""
    _, grad = _deterministic_gradient(params, config, x)
    return RelevanceVector(grad ** 2, "gs")


def relevance_std(params: Parameters, config: NetworkConfig, x) -> RelevanceVector:
    """Simple Taylor decomposition around the zero root point: ``(x_j df/dx_j)^2``."""
    x, grad = _deterministic_gradient(params, config, x)
    return RelevanceVector((x * grad) ** 2, "std")


def relevance(method: str, params: Parameters, config: NetworkConfig, x) -> RelevanceVector:
    funcs = {"lpn": relevance_lpn, "gs": relevance_gs, "std": relevance_std}
    if method not in funcs:
        raise ValueError(f"unknown relevance method {method!r}; choose from {METHODS}")
    return funcs[method](params, config, x)


def entropy_penalty(r):
    """Shannon entropy of the relevance scores normalised to sum to one.

    Accepts a :class:`RelevanceVector`, an array or a node; reduces over the
    last axis. All-zero scores give ``ln d``.
    """
    scores = r.scores if isinstance(r, RelevanceVector) else r
    shifted = ad.add(scores, ENTROPY_EPS)
    h = ad.div(shifted, ad.sum_(shifted, axis=-1, keepdims=True))
    return ad.neg(ad.sum_(ad.mul(h, ad.log(h)), axis=-1))


def regularized_loss(X, y, params: Parameters, config: NetworkConfig,
                     train_mode: bool = False, rng=None):
    """Batch mean of the likelihood loss plus ``lam`` times the relevance entropy.

    The likelihood term uses the (optionally dropout-thinned) training
    forward pass; the penalty uses evaluation-mode relevance scores, whose
    parameter gradient is second order.
    """
    pred, _ = forward(params, config, input_distribution(X, config), train_mode, rng)
    loss = mean_nll(y, pred, config.k)
    if config.lam == 0:
        return loss
    r = relevance_lpn_graph(params, config, X)
    return ad.add(loss, ad.mul(config.lam, ad.mean(entropy_penalty(r))))
