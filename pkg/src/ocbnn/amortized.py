"""Amortized constrained prior: a mean-field Gaussian over parameters whose
moments are optimized so that the *prior predictive* obeys the constraints.

The predictive under a mean-field Gaussian (mu, sigma) is approximated in
closed form by linearizing the network at mu:

  regression:  N(f(mu; x),  noise_sd^2 + g' (sigma^2 * g)),  g = df/dw at mu
  binary:      sigmoid((1 + pi * g'(sigma^2 g) / 8)^(-1/2) * g'mu),
               with g taken w.r.t. the pre-sigmoid output

Two per-point objectives are optimized stochastically over the constraint
region: the predictive mass assigned to the permitted output set (maximized)
or the KL divergence from the predictive to a target distribution
(minimized). Gradients are exact, including the dependence of g on mu, via
Hessian-vector products. After optimization the variances are shrunk by a
configurable factor before the result is used as a prior for posterior
inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import kernels
from .constraints import (
    BernoulliDist,
    Constraint,
    GaussianDist,
    IntervalUnion,
    ValueSet,
    sample_region,
)
from .network import NetworkArch, save_params, load_params, sigmoid
from .optim import AdaGrad
from .priors import DiagonalGaussianPrior

_SQRT_2PI = np.sqrt(2.0 * np.pi)
DEFAULT_SHRINK = 35.0


class AmortizedPriorError(ValueError):
    """Invalid amortized-prior configuration."""


class AmortizedOptimizationError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class VariationalParams:
    """Mean-field Gaussian moments; sigma kept as log-sigma for optimization."""

    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.log_sigma = np.asarray(self.log_sigma, dtype=np.float64)
        if self.mu.shape != self.log_sigma.shape:
            raise AmortizedPriorError("mu and log_sigma disagree on shape")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @staticmethod
    def initial(dim: int, mu0: float = 0.0, sigma0: float = 1.0) -> "VariationalParams":
        return VariationalParams(np.full(dim, mu0), np.full(dim, np.log(sigma0)))


class ScalarHeadAdapter:
    """Single-raw-output view of a network (regression or binary head)."""

    def __init__(self, arch: NetworkArch):
        if arch.task not in ("regression", "binary_logit"):
            raise AmortizedPriorError("the amortized prior supports regression and binary heads only")
        self.arch = arch
        self.n_params = arch.n_params
        self.noise_sd = arch.noise_sd if arch.task == "regression" else 0.0

    def arch_task(self) -> str:
        return self.arch.task

    def value_and_grad(self, w: np.ndarray, x: np.ndarray) -> tuple[float, np.ndarray]:
        xb = np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(1, -1))
        w = np.ascontiguousarray(np.asarray(w, dtype=np.float64))
        raw, grad = kernels.vjp_batch(w, self.arch.sizes, xb, np.ones((1, 1)))
        return float(raw[0, 0]), grad

    def value_grad_hvp(self, w: np.ndarray, x: np.ndarray, u: np.ndarray):
        xv = np.ascontiguousarray(np.asarray(x, dtype=np.float64).ravel())
        w = np.ascontiguousarray(np.asarray(w, dtype=np.float64))
        u = np.ascontiguousarray(np.asarray(u, dtype=np.float64))
        raw, _, g, hu = kernels.hvp_single(w, self.arch.sizes, xv, u)
        return float(raw), g, hu


# ---------------------------------------------------------------------------
# Closed-form prior predictive


def prior_predictive_regression(mu, sigma, adapter, x) -> tuple[float, float]:
    """Gaussian predictive approximation: mean and variance at one input."""
    mean, g = adapter.value_and_grad(np.asarray(mu, dtype=np.float64), x)
    sigma = np.asarray(sigma, dtype=np.float64)
    var = adapter.noise_sd ** 2 + float(g @ (sigma ** 2 * g))
    return mean, var


def prior_predictive_binary(mu, sigma, adapter, x) -> float:
    """Probit-corrected sigmoid predictive for a binary head.

    The pre-sigmoid output is linearized at mu: the induced Gaussian has
    mean phi_mu(x) and variance g' (sigma^2 g), and the sigmoid of that
    Gaussian is approximated by attenuating the mean. (For models linear in
    the parameters the mean equals g'mu.)
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    s, g = adapter.value_and_grad(mu, x)
    v = float(g @ (sigma ** 2 * g))
    kappa = (1.0 + np.pi * v / 8.0) ** -0.5
    return float(sigmoid(kappa * s))


def _interval_mass_terms(intervals, mean: float, var: float):
    """Mass of N(mean, var) over the union, plus d/dmean and d/dvar."""
    sd = np.sqrt(var)
    mass = 0.0
    dm = 0.0
    dv = 0.0
    for lo, hi in intervals:
        for bound, sign in ((hi, 1.0), (lo, -1.0)):
            if np.isinf(bound):
                mass += sign * (1.0 if bound > 0 else 0.0)
                continue
            z = (bound - mean) / sd
            pdf = np.exp(-0.5 * z * z) / (_SQRT_2PI * sd)
            mass += sign * ndtr(z)
            dm -= sign * pdf
            dv -= sign * pdf * z / (2.0 * sd)
    return mass, dm, dv


def _allowed_binary_class(constraint: Constraint) -> int:
    if not isinstance(constraint.rule, ValueSet):
        raise AmortizedPriorError("binary mass objective needs a class-set rule")
    classes = {int(v) for v in constraint.rule.values}
    if not classes <= {0, 1} or len(classes) != 1:
        raise AmortizedPriorError("binary class rule must name exactly one of {0, 1}")
    cls = classes.pop()
    if constraint.polarity == "negative":
        cls = 1 - cls
    return cls


def objective_positive_mass(mu, sigma, adapter, constraint: Constraint, x) -> float:
    """Predictive probability mass on the permitted output set at ``x``."""
    if not constraint.deterministic:
        raise AmortizedPriorError("the mass objective applies to deterministic constraints")
    if adapter.arch_task() == "regression":
        if not isinstance(constraint.rule, IntervalUnion):
            raise AmortizedPriorError("regression mass objective needs an interval rule")
        mean, var = prior_predictive_regression(mu, sigma, adapter, x)
        mass, _, _ = _interval_mass_terms(constraint.rule.intervals_at(x), mean, var)
        return 1.0 - mass if constraint.polarity == "negative" else mass
    p1 = prior_predictive_binary(mu, sigma, adapter, x)
    return p1 if _allowed_binary_class(constraint) == 1 else 1.0 - p1


def objective_divergence(mu, sigma, adapter, constraint: Constraint, x) -> float:
    """KL from the predictive to the constraint's target distribution."""
    if constraint.polarity != "probabilistic":
        raise AmortizedPriorError("the divergence objective applies to probabilistic constraints")
    dist = constraint.dist
    if isinstance(dist, GaussianDist):
        if adapter.arch_task() != "regression":
            raise AmortizedPriorError("gaussian target needs a regression head")
        mean, var = prior_predictive_regression(mu, sigma, adapter, x)
        m2 = float(dist.mean_at(np.atleast_2d(x))[0])
        s2sq = float(dist.sd) ** 2
        return float(np.log(dist.sd) - 0.5 * np.log(var)
                     + (var + (mean - m2) ** 2) / (2.0 * s2sq) - 0.5)
    if isinstance(dist, BernoulliDist):
        if adapter.arch_task() != "binary_logit":
            raise AmortizedPriorError("bernoulli target needs a binary head")
        p = np.clip(prior_predictive_binary(mu, sigma, adapter, x), 1e-12, 1 - 1e-12)
        q = float(dist.p_at(np.atleast_2d(x))[0])
        return float(p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q)))
    raise AmortizedPriorError("unsupported target distribution for the divergence objective")


# gradients -----------------------------------------------------------------


def _regression_chain(mu, sigma, adapter, x, dmean: float, dvar: float):
    """Map (d/dmean, d/dvar) of a scalar to gradients w.r.t. (mu, log_sigma)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    _, g = adapter.value_and_grad(mu, x)
    _, _, hu = adapter.value_grad_hvp(mu, x, sigma ** 2 * g)
    dmu = dmean * g + dvar * 2.0 * hu
    dlogsigma = dvar * 2.0 * sigma ** 2 * g * g
    return dmu, dlogsigma


def _binary_chain(mu, sigma, adapter, x, dp: float):
    """Map d/dP of a scalar to gradients w.r.t. (mu, log_sigma)."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    s, g = adapter.value_and_grad(mu, x)
    v = float(g @ (sigma ** 2 * g))
    kappa = (1.0 + np.pi * v / 8.0) ** -0.5
    p = float(sigmoid(kappa * s))
    dact = p * (1.0 - p)
    # v depends on mu through g
    _, _, h_sg = adapter.value_grad_hvp(mu, x, sigma ** 2 * g)
    dv_dmu = 2.0 * h_sg
    dkappa_dv = -0.5 * (1.0 + np.pi * v / 8.0) ** -1.5 * (np.pi / 8.0)
    dmu = dp * dact * (kappa * g + s * dkappa_dv * dv_dmu)
    dlogsigma = dp * dact * s * dkappa_dv * 2.0 * sigma ** 2 * g * g
    return p, dmu, dlogsigma


def grad_objective_positive_mass(mu, sigma, adapter, constraint: Constraint, x):
    """Mass objective value and its gradient w.r.t. (mu, log_sigma)."""
    if adapter.arch_task() == "regression":
        mean, var = prior_predictive_regression(mu, sigma, adapter, x)
        mass, dm, dv = _interval_mass_terms(constraint.rule.intervals_at(x), mean, var)
        sign = -1.0 if constraint.polarity == "negative" else 1.0
        value = 1.0 - mass if constraint.polarity == "negative" else mass
        dmu, dls = _regression_chain(mu, sigma, adapter, x, sign * dm, sign * dv)
        return value, dmu, dls
    cls = _allowed_binary_class(constraint)
    dp = 1.0 if cls == 1 else -1.0
    p, dmu, dls = _binary_chain(mu, sigma, adapter, x, dp)
    return (p if cls == 1 else 1.0 - p), dmu, dls


def grad_objective_divergence(mu, sigma, adapter, constraint: Constraint, x):
    """Divergence objective value and gradient w.r.t. (mu, log_sigma)."""
    dist = constraint.dist
    if isinstance(dist, GaussianDist):
        mean, var = prior_predictive_regression(mu, sigma, adapter, x)
        m2 = float(dist.mean_at(np.atleast_2d(x))[0])
        s2sq = float(dist.sd) ** 2
        value = float(np.log(dist.sd) - 0.5 * np.log(var)
                      + (var + (mean - m2) ** 2) / (2.0 * s2sq) - 0.5)
        dmean = (mean - m2) / s2sq
        dvar = -0.5 / var + 0.5 / s2sq
        dmu, dls = _regression_chain(mu, sigma, adapter, x, dmean, dvar)
        return value, dmu, dls
    if isinstance(dist, BernoulliDist):
        q = float(dist.p_at(np.atleast_2d(x))[0])
        p_raw = prior_predictive_binary(mu, sigma, adapter, x)
        p = float(np.clip(p_raw, 1e-12, 1.0 - 1e-12))
        value = p * np.log(p / q) + (1.0 - p) * np.log((1.0 - p) / (1.0 - q))
        dkl_dp = np.log(p / q) - np.log((1.0 - p) / (1.0 - q))
        _, dmu, dls = _binary_chain(mu, sigma, adapter, x, dkl_dp)
        return float(value), dmu, dls
    raise AmortizedPriorError("unsupported target distribution for the divergence objective")


# ---------------------------------------------------------------------------
# Optimization loop


@dataclass
class OptimizationHistory:
    mass: list = field(default_factory=list)        # mean mass objective per epoch
    divergence: list = field(default_factory=list)  # mean KL per epoch


def optimize_amortized_prior(
    adapter,
    constraints,
    *,
    epochs: int,
    lr: float,
    points_per_epoch: int,
    seed: int,
    init_mu: float = 0.0,
    init_sigma: float = 1.0,
    mu_jitter: float = 0.0,
) -> tuple[VariationalParams, OptimizationHistory]:
    """Stochastically optimize the variational prior against its constraints.

    Each epoch draws fresh points from every constraint's region, averages
    the per-point objective gradients (ascending mass, descending
    divergence), and applies one AdaGrad step to (mu, log_sigma).

    ``mu_jitter`` adds a seeded Gaussian perturbation to the initial means.
    At exactly mu = 0 the RBF hidden layer is input-blind and the closed-form
    predictive's gradient has no input-dependent component, so targets that
    vary with x are unreachable; a small jitter breaks that symmetry.
    """
    if epochs < 1:
        raise AmortizedPriorError("epochs must be >= 1")
    dim = adapter.n_params
    lam = VariationalParams.initial(dim, init_mu, init_sigma)
    master = np.random.default_rng(seed)
    if mu_jitter > 0.0:
        lam = VariationalParams(lam.mu + master.normal(0.0, mu_jitter, dim),
                                lam.log_sigma)
    opt = AdaGrad(2 * dim, lr)
    history = OptimizationHistory()

    for epoch in range(epochs):
        total = np.zeros(2 * dim)
        mass_vals = []
        div_vals = []
        for constraint in constraints:
            pts = sample_region(constraint.region, points_per_epoch,
                                int(master.integers(2 ** 62))).points
            dmu = np.zeros(dim)
            dls = np.zeros(dim)
            for x in pts:
                if constraint.deterministic:
                    val, gmu, gls = grad_objective_positive_mass(
                        lam.mu, lam.sigma, adapter, constraint, x)
                    mass_vals.append(val)
                    dmu += gmu
                    dls += gls
                else:
                    val, gmu, gls = grad_objective_divergence(
                        lam.mu, lam.sigma, adapter, constraint, x)
                    div_vals.append(val)
                    dmu -= gmu
                    dls -= gls
            total[:dim] += dmu / len(pts)
            total[dim:] += dls / len(pts)
        if not np.all(np.isfinite(total)):
            raise AmortizedOptimizationError(f"non-finite objective gradient at epoch {epoch}", epoch)
        step = opt.step(total)
        lam = VariationalParams(lam.mu + step[:dim], lam.log_sigma + step[dim:])
        if mass_vals:
            history.mass.append(float(np.mean(mass_vals)))
        if div_vals:
            history.divergence.append(float(np.mean(div_vals)))
    return lam, history


# ---------------------------------------------------------------------------
# Using the optimized moments as a prior


def make_amortized_prior(lam: VariationalParams, shrink: float = DEFAULT_SHRINK) -> DiagonalGaussianPrior:
    """Shrink the optimized variances and return the resulting Gaussian prior."""
    if shrink < 1.0:
        raise AmortizedPriorError("shrink must be >= 1")
    return DiagonalGaussianPrior(lam.mu, lam.sigma / shrink)


def amortized_log_prior(w: np.ndarray, lam: VariationalParams, shrink: float = DEFAULT_SHRINK) -> float:
    return make_amortized_prior(lam, shrink).log_density(w)


def save_variational(prefix, arch: NetworkArch, lam: VariationalParams) -> None:
    """Persist the moments as two parameter files: <prefix>.mu / <prefix>.sigma."""
    save_params(str(prefix) + ".mu", arch, lam.mu)
    save_params(str(prefix) + ".sigma", arch, lam.sigma)


def load_variational(prefix, expected_arch: NetworkArch | None = None) -> VariationalParams:
    _, mu = load_params(str(prefix) + ".mu", expected_arch)
    _, sigma = load_params(str(prefix) + ".sigma", expected_arch)
    if np.any(sigma <= 0):
        raise AmortizedPriorError("loaded sigma has non-positive entries")
    return VariationalParams(mu, np.log(sigma))
