"""Explain prediction variance through calibrated per-feature input variances.

For one query point the network weights stay frozen while the input
variances ``sigma = delta * exp(rho)`` are tuned (Adam on ``rho``) so that
the predictive distribution approaches ``N(mean*, t * beta*)``. Repeating
this for a ladder of factors ``t`` traces, per feature, how much input
variance the model attributes as the prediction variance grows; the area
under that curve is the feature's uncertainty-gap score.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .model import NetworkConfig, Parameters, forward, input_distribution
from .train import AdamState, adam_step

DEFAULT_FACTORS = (1.1, 1.25, 1.5, 1.75, 2.0, 2.5)


@dataclass
class Calibration:
    sigma: np.ndarray
    beta: float
    mean: float
    kl: float
    iterations: int
    converged: bool
    rho: np.ndarray = field(repr=False)


def gaussian_kl(mean_p, var_p, mean_q, var_q):
    """KL(N(mean_p, var_p) || N(mean_q, var_q)) for univariate Gaussians."""
    return ad.add(
        ad.mul(0.5, ad.sub(np.log(var_q), ad.log(var_p))),
        ad.sub(ad.div(ad.add(var_p, ad.square(ad.sub(mean_p, mean_q))), 2.0 * var_q), 0.5),
    )


def _predict_one(params, config, x, sigma):
    pred, _ = forward(params, config, input_distribution(x, config, sigma))
    return pred


def calibrate_sigma(params: Parameters, config: NetworkConfig, x, t: float,
                    delta: float | None = None, lr: float = 0.01, max_iter: int = 500,
                    tol: float = 0.01, rho0=None, baseline=None) -> Calibration:
    """Input variances that raise the prediction variance to ``t`` times baseline.

    Minimises the KL divergence from the current predictive Gaussian to
    ``N(mean*, t beta*)``; the mean term keeps the prediction in place.
    Stops once ``|beta/(t beta*) - 1| < tol``. If ``max_iter`` runs out the
    iterate closest to the target variance is returned with
    ``converged=False``.
    """
    if t < 1:
        raise ValueError(f"variance factor must be >= 1, got {t}")
    params = params.values()
    x = np.asarray(x, dtype=np.float64)
    delta = config.delta if delta is None else delta
    if baseline is None:
        base = _predict_one(params, config, x, np.full(x.shape, delta))
        baseline = (float(base.mean), float(base.variance))
    mean_star, beta_star = baseline
    target = t * beta_star
    rho = np.zeros(x.shape) if rho0 is None else np.array(rho0, dtype=np.float64)
    state = AdamState.zeros_like([rho])
    best = None
    for it in range(max_iter + 1):
        rho_leaf = ad.leaf(rho)
        sigma = ad.mul(delta, ad.exp(rho_leaf))
        pred = _predict_one(params, config, x, sigma)
        kl = gaussian_kl(pred.mean, pred.variance, mean_star, target)
        beta = float(ad.value_of(pred.variance))
        miss = abs(beta / target - 1.0)
        current = Calibration(delta * np.exp(rho), beta, float(ad.value_of(pred.mean)),
                              float(ad.value_of(kl)), it, miss < tol, rho.copy())
        if best is None or miss < abs(best.beta / target - 1.0):
            best = current
        if current.converged or it == max_iter:
            break
        grad, = ad.gradient(kl, [rho_leaf])
        (rho,), state = adam_step([rho], [grad], state, lr)
    return current if current.converged else best


@dataclass
class GapProfile:
    """Calibration ladder for one sample.

    ``factors`` starts with the anchor ``1.0`` (input variances at delta),
    followed by the requested factors; ``sigmas`` has one row per factor.
    """

    factors: list
    betas: list
    sigmas: list
    gaps: list
    converged: list
    iterations: list
    baseline_mean: float
    baseline_beta: float

    def to_dict(self) -> dict:
        return asdict(self)


def trapezoid_area(abscissa, ordinate) -> float:
    """Trapezoidal area with points taken in ascending abscissa order."""
    abscissa = np.asarray(abscissa, dtype=np.float64)
    ordinate = np.asarray(ordinate, dtype=np.float64)
    order = np.argsort(abscissa, kind="stable")
    return float(np.trapezoid(ordinate[order], abscissa[order]))


def gap_scores(params: Parameters, config: NetworkConfig, x, factors=DEFAULT_FACTORS,
               delta: float | None = None, warm_start: bool = True, **calibration) -> GapProfile:
    """Uncertainty-gap score per feature: area under sigma_j versus achieved beta."""
    factors = [float(t) for t in factors]
    if factors != sorted(factors):
        raise ValueError("factors must be sorted ascending")
    params = params.values()
    x = np.asarray(x, dtype=np.float64)
    delta = config.delta if delta is None else delta
    base = _predict_one(params, config, x, np.full(x.shape, delta))
    baseline = (float(base.mean), float(base.variance))
    betas, sigmas = [baseline[1]], [np.full(x.shape, delta)]
    converged, iterations = [True], [0]
    rho = None
    for t in factors:
        cal = calibrate_sigma(params, config, x, t, delta, rho0=rho, baseline=baseline, **calibration)
        betas.append(cal.beta)
        sigmas.append(cal.sigma)
        converged.append(cal.converged)
        iterations.append(cal.iterations)
        if warm_start:
            rho = cal.rho
    sig = np.array(sigmas)
    gaps = [trapezoid_area(betas, sig[:, j]) for j in range(x.shape[0])]
    return GapProfile(
        factors=[1.0] + factors,
        betas=[float(b) for b in betas],
        sigmas=sig.tolist(),
        gaps=gaps,
        converged=converged,
        iterations=iterations,
        baseline_mean=baseline[0],
        baseline_beta=baseline[1],
    )
