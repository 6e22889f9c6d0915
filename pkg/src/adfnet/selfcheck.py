"""Release gate: numerical oracles for filtering, gradients and calibration.

Each check reports its tolerance and the observed error. ``inject_fault``
temporarily breaks one piece of the numerics so the gate itself can be
tested; the documented faults are

``relu-var-sign``
    sign flip of the ``mu sqrt(nu) phi`` term in the rectified variance.
``leaky-grad``
    the leaky slope is dropped from the mean's derivative in ``mu``.
``pdf-second-derivative``
    sign flip in the derivative of the normal density, which only enters
    second-order gradients.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import special

from . import autodiff as ad
from . import gauss
from .model import NetworkConfig, Parameters, forward, init_params, input_distribution
from .objectives import entropy_penalty, mean_nll, relevance_lpn_graph
from .uq import calibrate_sigma, gap_scores

FAULTS = ("relu-var-sign", "leaky-grad", "pdf-second-derivative")


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0

    def __post_init__(self):
        # numpy scalars leak in from the checks; keep the report plain JSON
        self.passed = bool(self.passed)
        self.observed = float(self.observed)
        self.tolerance = float(self.tolerance)


@dataclass
class SelfcheckReport:
    checks: list = field(default_factory=list)
    injected: str | None = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "injected": self.injected,
            "failures": self.failures,
            "checks": [asdict(c) for c in self.checks],
        }


# -- fault injection ------------------------------------------------------


def _kernel_bad_variance(mu, var, c):
    out = gauss._leaky_kernel(mu, var, c)
    var = np.maximum(var, gauss.VAR_FLOOR)
    s = np.sqrt(var)
    pdf = np.exp(-0.5 * mu * mu / var) / np.sqrt(2 * np.pi)
    # flipping +mu*s*pdf to -mu*s*pdf in both halves of the composition
    out[1] = np.maximum(out[1] - 2.0 * (1.0 - c * c) * mu * s * pdf, 0.0)
    return out


def _leaky_vjp_bad(g, out, mu, var, c):
    s = ad.sqrt(ad.clamp_min(var, gauss.VAR_FLOOR))
    g_mu, g_nu = gauss._leaky_vjp(g, out, mu, var, c)
    # remove the "+ c" slope contribution from d mean / d mu
    return ad.sub(g_mu, ad.mul(ad.index(g, 0), c)), g_nu


@contextlib.contextmanager
def inject_fault(name: str | None):
    if name is None:
        yield
        return
    if name not in FAULTS:
        raise ValueError(f"unknown fault {name!r}; choose from {FAULTS}")
    if name == "relu-var-sign":
        saved = gauss._kernel
        gauss._kernel = _kernel_bad_variance
        try:
            yield
        finally:
            gauss._kernel = saved
    elif name == "leaky-grad":
        saved = gauss.leaky_moments.vjp
        gauss.leaky_moments.vjp = _leaky_vjp_bad
        try:
            yield
        finally:
            gauss.leaky_moments.vjp = saved
    else:
        saved = ad.norm_pdf.vjp
        ad.norm_pdf.vjp = lambda g, out, x: (ad.mul(g, ad.mul(x, out)),)
        try:
            yield
        finally:
            ad.norm_pdf.vjp = saved


# -- individual checks ----------------------------------------------------


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        result = fn(*args, **kwargs)
        result.seconds = time.perf_counter() - start
        return result
    wrapper.__name__ = fn.__name__
    return wrapper


def _leaky(z, c):
    return np.where(z > 0, z, c * z)


@_timed
def check_closed_form() -> CheckResult:
    relu = gauss.filter_relu(gauss.GaussianTensor(np.zeros(1), np.ones(1)))
    leaky = gauss.filter_leaky_relu(gauss.GaussianTensor(np.zeros(1), np.ones(1)), 0.01)
    got = np.array([relu.means[0], relu.variances[0], leaky.means[0], leaky.variances[0]])
    # z ~ N(0, 1): E[max(z,0)] = 1/sqrt(2 pi), E[max(z,0)^2] = 1/2, and the
    # leaky output has E[l] = (1-c)/sqrt(2 pi), E[l^2] = (1+c^2)/2
    m = 1 / np.sqrt(2 * np.pi)
    want = np.array([m, 0.5 - m * m, 0.99 * m, 0.5 * (1 + 1e-4) - (0.99 * m) ** 2])
    err = float(np.max(np.abs(got - want)))
    return CheckResult("closed-form-fixtures", err <= 1e-9, err, 1e-9)


@_timed
def check_mc_relu(n: int = 1_000_000, seed: int = 0) -> CheckResult:
    """Rectified moments at several (mu, nu) against sampled max(0, z)."""
    rng = np.random.default_rng(seed)
    points = [(0.0, 1.0), (1.0, 0.5), (-0.7, 2.0), (1.5, 0.3), (-1.2, 0.8)]
    worst_se, worst_rel = 0.0, 0.0
    for mu, nu in points:
        z = np.maximum(mu + np.sqrt(nu) * rng.standard_normal(n), 0.0)
        out = gauss.filter_relu(gauss.GaussianTensor(np.array([mu]), np.array([nu])))
        se = z.std() / np.sqrt(n)
        worst_se = max(worst_se, abs(out.means[0] - z.mean()) / se)
        worst_rel = max(worst_rel, abs(out.variances[0] - z.var()) / z.var())
    ok = worst_se <= 4.0 and worst_rel <= 0.02
    return CheckResult("mc-relu-moments", ok, worst_rel, 0.02,
                       f"worst mean deviation {worst_se:.2f} standard errors (limit 4)")


@_timed
def check_mc_leaky_stack(n: int = 1_000_000, seed: int = 1, trials: int = 5) -> CheckResult:
    """Dense + leaky ReLU on random Gaussians against sampled activations."""
    rng = np.random.default_rng(seed)
    worst_se, worst_rel = 0.0, 0.0
    for _ in range(trials):
        d_in, d_out = rng.integers(1, 5, size=2)
        mu = rng.uniform(-2, 2, d_in)
        nu = rng.uniform(0.05, 1.0, d_in)
        w = rng.normal(0, 1, (d_out, d_in))
        b = rng.normal(0, 0.5, d_out)
        c = rng.uniform(0, 0.5)
        g = gauss.filter_leaky_relu(gauss.filter_dense(gauss.GaussianTensor(mu, nu), w, b), c)
        x = mu + np.sqrt(nu) * rng.standard_normal((n, d_in))
        h = _leaky(x @ w.T + b, c)
        se = h.std(axis=0) / np.sqrt(n)
        worst_se = max(worst_se, float(np.max(np.abs(g.means - h.mean(axis=0)) / se)))
        worst_rel = max(worst_rel, float(np.max(np.abs(g.variances - h.var(axis=0)) / h.var(axis=0))))
    ok = worst_se <= 4.0 and worst_rel <= 0.02
    return CheckResult("mc-dense-leaky-stack", ok, worst_rel, 0.02,
                       f"worst mean deviation {worst_se:.2f} standard errors (limit 4)")


@_timed
def check_relu_derivative_identity() -> CheckResult:
    mu = np.linspace(-3, 3, 100)
    nu = np.full(100, 0.7)
    mu_leaf = ad.leaf(mu)
    out = gauss.filter_relu(gauss.GaussianTensor(mu_leaf, nu))
    grad, = ad.gradient(ad.sum_(out.means), [mu_leaf])
    err = float(np.max(np.abs(grad - special.ndtr(mu / np.sqrt(nu)))))
    return CheckResult("relu-mean-derivative-identity", err <= 1e-8, err, 1e-8)


def relative_error(a, b) -> float:
    a, b = np.concatenate([np.ravel(v) for v in a]), np.concatenate([np.ravel(v) for v in b])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def central_differences(fn, arrays, step):
    grads = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        for j in np.ndindex(a.shape):
            plus = [v.copy() for v in arrays]
            minus = [v.copy() for v in arrays]
            plus[i][j] += step
            minus[i][j] -= step
            g[j] = (fn(plus) - fn(minus)) / (2 * step)
        grads.append(g)
    return grads


def random_problem(rng, max_width, batch, min_beta=1e-6):
    """Small random network and batch for derivative checks.

    Draws whose predictive variance comes within ``min_beta`` of the floor
    are redrawn: the floor is a kink, and next to it the loss curvature
    (through ``1/beta``) swamps any finite-difference step.
    """
    while True:
        widths = (int(rng.integers(1, max_width + 1)), *rng.integers(1, max_width + 1, size=2), 1)
        net = NetworkConfig(widths=widths, dropout=0.0, seed=int(rng.integers(1 << 30)), lam=0.1)
        params = init_params(net)
        params = Parameters.from_flat(a + 0.1 * rng.standard_normal(a.shape) for a in params.flat())
        X = rng.standard_normal((batch, widths[0]))
        y = rng.standard_normal(batch)
        pred, _ = forward(params, net, input_distribution(X, net))
        if np.min(pred.variance) >= min_beta:
            return net, params, X, y


@_timed
def check_loss_gradient(networks: int = 10, seed: int = 2, tol: float = 1e-4) -> CheckResult:
    """Likelihood-loss parameter gradient against central differences (step 1e-4)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(networks):
        net, params, X, y = random_problem(rng, 6, 8)

        def loss(arrays):
            pred, _ = forward(Parameters.from_flat(arrays), net, input_distribution(X, net))
            return mean_nll(y, pred, net.k)

        leaves = [ad.leaf(a) for a in params.flat()]
        grads = ad.gradient(loss(leaves), leaves)
        fd = central_differences(lambda a: float(loss(a)), params.flat(), 1e-4)
        worst = max(worst, relative_error(grads, fd))
    return CheckResult("loss-gradient-fd", worst < tol, worst, tol)


@_timed
def check_penalty_second_order(networks: int = 5, seed: int = 3, tol: float = 1e-3) -> CheckResult:
    """Parameter gradient of the relevance entropy (a gradient of gradients)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(networks):
        net, params, X, _ = random_problem(rng, 6, 4)

        def penalty(arrays):
            r = relevance_lpn_graph(Parameters.from_flat(arrays), net, X)
            return ad.mean(entropy_penalty(r))

        leaves = [ad.leaf(a) for a in params.flat()]
        grads = ad.gradient_of_gradient(penalty(leaves), leaves)
        fd = central_differences(lambda a: float(ad.value_of(penalty(a))), params.flat(), 1e-5)
        worst = max(worst, relative_error(grads, fd))
    return CheckResult("penalty-second-order-fd", worst < tol, worst, tol)


def _linear_model(coefs):
    coefs = np.asarray(coefs, dtype=np.float64)
    net = NetworkConfig(widths=(coefs.size, 1))
    return net, Parameters([coefs.reshape(1, -1)], [np.zeros(1)])


@_timed
def check_calibration_oracle() -> CheckResult:
    """Linear models: variance doubles exactly when the input variance doubles."""
    net, params = _linear_model([3.0])
    cal = calibrate_sigma(params, net, np.array([0.5]), 2.0)
    sigma_err = abs(cal.sigma[0] / (2 * net.delta) - 1)
    beta_err = abs(cal.beta / (2 * 9 * net.delta) - 1)
    net2, params2 = _linear_model([3.0, 0.0])
    x2 = np.array([0.5, -0.3])
    cal2 = calibrate_sigma(params2, net2, x2, 2.0)
    gaps = gap_scores(params2, net2, x2).gaps
    ok = sigma_err < 0.05 and beta_err < 0.01 and cal2.sigma[1] == net2.delta and gaps[0] > gaps[1]
    return CheckResult(
        "calibration-oracle", ok, max(sigma_err, beta_err), 0.01,
        f"sigma rel err {sigma_err:.2e} (limit 5e-2), beta rel err {beta_err:.2e}, "
        f"dead-feature sigma {cal2.sigma[1]:.6g}, gaps {gaps[0]:.3e} > {gaps[1]:.3e}",
    )


CHECKS = (
    check_closed_form,
    check_mc_relu,
    check_mc_leaky_stack,
    check_relu_derivative_identity,
    check_loss_gradient,
    check_penalty_second_order,
    check_calibration_oracle,
)


def run_selfcheck(inject: str | None = None) -> SelfcheckReport:
    report = SelfcheckReport(injected=inject)
    with inject_fault(inject):
        for check in CHECKS:
            try:
                result = check()
            except Exception as exc:  # a crashing check is a failing check
                result = CheckResult(check.__name__.removeprefix("check_"), False, float("nan"),
                                     float("nan"), f"raised {type(exc).__name__}: {exc}")
            report.checks.append(result)
    return report
