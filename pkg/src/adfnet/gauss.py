"""Moment-matching filters that push a diagonal Gaussian through network layers.

All filters accept plain arrays or :mod:`adfnet.autodiff` nodes, so the same
code serves evaluation, training and input-gradient computation. Leading
axes are treated as a batch: ``means`` may be ``(n,)`` or ``(batch, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import autodiff as ad
from .errors import ConfigurationError

VAR_FLOOR = 1e-12
_INV_SQRT_2PI = 0.3989422804014327


@dataclass
class GaussianTensor:
    """Per-unit means and variances of a factorised Gaussian activation."""

    means: object
    variances: object

    def __post_init__(self):
        if ad.shape_of(self.means) != ad.shape_of(self.variances):
            raise ConfigurationError(
                f"means {ad.shape_of(self.means)} and variances "
                f"{ad.shape_of(self.variances)} differ in shape"
            )
        if isinstance(self.means, ad.Node) or isinstance(self.variances, ad.Node):
            return
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if not np.all(np.isfinite(self.means)):
            raise ConfigurationError("non-finite mean")
        if not (np.all(np.isfinite(self.variances)) and np.all(self.variances >= 0.0)):
            raise ConfigurationError("variances must be finite and non-negative")

    @property
    def size(self) -> int:
        return ad.shape_of(self.means)[-1]

    def values(self) -> "GaussianTensor":
        """Detached copy holding plain arrays."""
        return GaussianTensor(ad.value_of(self.means).copy(), ad.value_of(self.variances).copy())


def std_normal_pdf(x):
    """Standard normal density."""
    return ad.norm_pdf(x)


def std_normal_cdf(x):
    """Standard normal distribution function, via ``scipy.special.ndtr``."""
    return ad.norm_cdf(x)


def relu_moments(mu, var):
    """Mean and variance of ``max(0, z)`` for ``z ~ N(mu, var)`` (plain arrays)."""
    m, v, _, _ = _relu_pair(mu, var)
    return m, v


def _relu_pair(mu, var):
    # moments of max(0, z) and of max(0, -z), sharing one evaluation of cdf/pdf
    var = np.maximum(var, VAR_FLOOR)
    s = np.sqrt(var)
    a = mu / s
    cdf, cdf_neg = special.ndtr(a), special.ndtr(-a)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * a * a)
    second = mu * mu + var
    m_pos = mu * cdf + s * pdf
    m_neg = -mu * cdf_neg + s * pdf
    v_pos = second * cdf + mu * s * pdf - m_pos * m_pos
    v_neg = second * cdf_neg - mu * s * pdf - m_neg * m_neg
    return m_pos, np.maximum(v_pos, 0.0), m_neg, np.maximum(v_neg, 0.0)


def _leaky_kernel(mu, var, c):
    m_pos, v_pos, m_neg, v_neg = _relu_pair(mu, var)
    mean = m_pos - c * m_neg
    variance = v_pos + c * c * v_neg + 2.0 * c * m_pos * m_neg
    return np.stack([mean, np.maximum(variance, 0.0)])


def _leaky_vjp(g, out, mu, var, c):
    s = ad.sqrt(ad.clamp_min(var, VAR_FLOOR))
    a = ad.div(mu, s)
    cdf, pdf = ad.norm_cdf(a), ad.norm_pdf(a)
    m = ad.add(ad.mul(mu, cdf), ad.mul(s, pdf))
    g_mean, g_var = ad.index(g, 0), ad.index(g, 1)
    q = 1.0 - c
    d_mean_dmu = ad.add(ad.mul(q, cdf), c)
    d_mean_dnu = ad.div(ad.mul(q, pdf), ad.mul(2.0, s))
    # variance = q^2 var_relu + c^2 nu + 2 c q (E[relu(z)^2] - m mu), differentiated term by term
    d_var_dmu = ad.mul(2.0 * q, ad.add(ad.mul(q, ad.mul(m, ad.sub(1.0, cdf))), ad.mul(c, ad.mul(s, pdf))))
    d_var_dnu = ad.add(
        ad.add(
            ad.mul(q * q, ad.sub(cdf, ad.div(ad.mul(m, pdf), s))),
            c * c,
        ),
        ad.mul(2.0 * c * q, ad.sub(cdf, ad.div(ad.mul(mu, pdf), ad.mul(2.0, s)))),
    )
    g_mu = ad.add(ad.mul(g_mean, d_mean_dmu), ad.mul(g_var, d_var_dmu))
    g_nu = ad.add(ad.mul(g_mean, d_mean_dnu), ad.mul(g_var, d_var_dnu))
    return g_mu, g_nu


# The kernel is looked up at call time so self-check fault injection can swap it.
leaky_moments = ad.primitive(
    "leaky_moments", lambda mu, var, c: _kernel(mu, var, c), _leaky_vjp, 2
)


def _kernel(mu, var, c):
    return _leaky_kernel(mu, var, c)


def filter_dense(g: GaussianTensor, weights, bias) -> GaussianTensor:
    """Affine layer: mean ``W mu + b``, variance ``(W*W) nu``."""
    w_shape, b_shape = ad.shape_of(weights), ad.shape_of(bias)
    if len(w_shape) != 2 or w_shape[1] != g.size or b_shape != (w_shape[0],):
        raise ConfigurationError(
            f"dense layer {w_shape} with bias {b_shape} cannot take {g.size} inputs"
        )
    wt = ad.transpose(weights)
    means = ad.add(ad.matmul(g.means, wt), bias)
    variances = ad.matmul(g.variances, ad.transpose(ad.square(weights)))
    return GaussianTensor(means, variances)


def filter_relu(g: GaussianTensor) -> GaussianTensor:
    """ReLU: ``mu Phi(a) + sqrt(nu) phi(a)`` and matching variance, ``a = mu/sqrt(nu)``."""
    return _filter_leaky(g, 0.0)


def _filter_leaky(g: GaussianTensor, c: float) -> GaussianTensor:
    out = leaky_moments(g.means, g.variances, c)
    return GaussianTensor(ad.index(out, 0), ad.index(out, 1))


def filter_leaky_relu(g: GaussianTensor, c: float = 0.01) -> GaussianTensor:
    """Leaky ReLU ``max(z, 0) - c max(-z, 0)`` composed from two ReLU filters.

    The cross term ``2c E[max(z,0)] E[max(-z,0)]`` accounts for the negative
    covariance of the two halves.
    """
    if not 0.0 <= c < 1.0:
        raise ConfigurationError(f"leaky slope must lie in [0, 1), got {c}")
    return _filter_leaky(g, c)


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli keep-mask with keep probability ``1 - p``."""
    return (rng.random(shape) >= p).astype(np.float64)


def filter_dropout(g: GaussianTensor, p: float, mask_source=None, train_mode: bool = True) -> GaussianTensor:
    """Drop whole units, zeroing both their mean and variance.

    ``mask_source`` is either a ``numpy`` Generator or an explicit 0/1 mask.
    Kept units are rescaled by ``1/(1-p)`` (means) and ``1/(1-p)**2``
    (variances) so that evaluation needs no rescaling.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {p}")
    if not train_mode or (p == 0.0 and not isinstance(mask_source, np.ndarray)):
        return g
    if isinstance(mask_source, np.random.Generator):
        mask = dropout_mask(ad.shape_of(g.means), p, mask_source)
    elif mask_source is None:
        raise ConfigurationError("train-mode dropout needs a random generator or a mask")
    else:
        mask = np.broadcast_to(np.asarray(mask_source, dtype=np.float64), ad.shape_of(g.means))
    keep = 1.0 - p
    return GaussianTensor(
        ad.mul(g.means, mask / keep),
        ad.mul(g.variances, mask / (keep * keep)),
    )
