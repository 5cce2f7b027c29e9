"""Constraint-aware log-priors over network parameters.

The sampled-constraint prior multiplies an isotropic Gaussian base density
with, per constraint, the product over frozen anchor points of a family
density evaluated at the network's output there:

    log p(w) = log N(w; 0, sd^2 I) + sum_c sum_t log p_g(out_w(x_t) | x_t)

Families: a Gaussian mixture over permitted regression values, a Dirichlet
over class probabilities with boosted mass on permitted classes, a negative
exponential that penalizes outputs landing in a forbidden inequality-defined
set, and (for probabilistic constraints) the constraint's own target
distribution. All densities are evaluated up to constants that do not depend
on ``w``; the negative exponential family is unnormalized by construction,
so values are not comparable across hyperparameter settings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from . import kernels
from .constraints import (
    BernoulliDist,
    CategoricalDist,
    Constraint,
    ConstraintSample,
    GaussianDist,
    InequalityList,
    ValueSet,
)
from .expressions import Expression
from .network import NetworkArch, sigmoid, softmax

_LOG_2PI = np.log(2.0 * np.pi)
SIMPLEX_TOL = 1e-9
PROB_FLOOR = 1e-12


class PriorError(ValueError):
    """Invalid prior configuration (family/task mismatch, bad parameters)."""


# ---------------------------------------------------------------------------
# Elementary densities


def log_base_prior(w: np.ndarray, base_sd: float) -> float:
    """Isotropic Gaussian log-density of the flat parameter vector."""
    if base_sd <= 0:
        raise PriorError("base_sd must be positive")
    w = np.asarray(w, dtype=np.float64)
    return float(-0.5 * w.size * (_LOG_2PI + 2.0 * np.log(base_sd))
                 - 0.5 * float(w @ w) / base_sd ** 2)


def grad_log_base_prior(w: np.ndarray, base_sd: float) -> np.ndarray:
    return -np.asarray(w, dtype=np.float64) / base_sd ** 2


def log_gmm_positive(y, means, weights, sd: float):
    """Log-density of a Gaussian mixture with shared scale ``sd``.

    ``y`` may be a scalar or a vector; ``means`` either a (K,) vector shared
    across points or a (T, K) matrix of per-point component means.
    """
    if sd <= 0:
        raise PriorError("mixture sd must be positive")
    y = np.asarray(y, dtype=np.float64)
    means = np.atleast_1d(np.asarray(means, dtype=np.float64))
    if means.ndim == 1:
        means = means.reshape(1, -1) if y.ndim else means.reshape(1, -1)
    k = means.shape[-1]
    weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
    if abs(weights.sum() - 1.0) > SIMPLEX_TOL:
        raise PriorError("mixture weights must sum to 1")
    z = (np.atleast_1d(y)[:, None] - means) / sd
    comp = np.log(weights) - 0.5 * z * z - np.log(sd) - 0.5 * _LOG_2PI
    out = logsumexp(comp, axis=1)
    return float(out[0]) if np.ndim(y) == 0 else out


def dlog_gmm_dy(y, means, weights, sd: float):
    """Derivative of ``log_gmm_positive`` with respect to ``y``."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    k = means.shape[-1]
    weights = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=np.float64)
    z = (y[:, None] - means) / sd
    comp = np.log(weights) - 0.5 * z * z
    comp -= logsumexp(comp, axis=1, keepdims=True)
    resp = np.exp(comp)
    return np.sum(resp * (means - y[:, None]), axis=1) / sd ** 2


def dirichlet_alphas(n_classes: int, allowed: Sequence[int], gamma: float, c: float) -> np.ndarray:
    """Concentration vector: ``gamma`` on permitted classes, ``gamma(1-c)`` elsewhere."""
    if gamma < 1.0:
        raise PriorError("dirichlet gamma must be >= 1")
    if not 0.0 < c < 1.0:
        raise PriorError("dirichlet c must lie in (0, 1)")
    if not allowed:
        raise PriorError("dirichlet constraint needs a nonempty class set")
    alphas = np.full(n_classes, gamma * (1.0 - c))
    for cls in allowed:
        if not 0 <= int(cls) < n_classes:
            raise PriorError(f"class {cls} out of range for {n_classes} classes")
        alphas[int(cls)] = gamma
    return alphas


def log_dirichlet(p: np.ndarray, alphas: np.ndarray):
    """Dirichlet log-pdf with entries clamped at the probability floor.

    ``p`` may be one probability vector or a (T, K) batch.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_FLOOR, 1.0)
    alphas = np.asarray(alphas, dtype=np.float64)
    norm = gammaln(alphas.sum()) - gammaln(alphas).sum()
    return norm + np.sum((alphas - 1.0) * np.log(p), axis=-1)


def log_dirichlet_positive(p, allowed: Sequence[int], gamma: float, c: float) -> float:
    """Dirichlet log-density of a single probability vector on the simplex."""
    p = np.asarray(p, dtype=np.float64)
    if abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise PriorError(f"probability vector sums to {p.sum()!r}, not 1")
    alphas = dirichlet_alphas(p.shape[-1], allowed, gamma, c)
    return float(log_dirichlet(p, alphas))


def soft_indicator(z, tau0: float, tau1: float):
    """Smooth indicator of ``z <= 0``: 1 far below zero, 0 far above."""
    if tau0 <= 0 or tau1 <= 0:
        raise PriorError("soft indicator temperatures must be positive")
    z = np.asarray(z, dtype=np.float64)
    out = 0.25 * (np.tanh(-tau0 * z) + 1.0) * (np.tanh(-tau1 * z) + 1.0)
    return float(out) if out.ndim == 0 else out


def dsoft_indicator(z, tau0: float, tau1: float):
    z = np.asarray(z, dtype=np.float64)
    a = np.tanh(-tau0 * z) + 1.0
    b = np.tanh(-tau1 * z) + 1.0
    da = -tau0 * (1.0 - np.tanh(tau0 * z) ** 2)
    db = -tau1 * (1.0 - np.tanh(tau1 * z) ** 2)
    out = 0.25 * (da * b + a * db)
    return float(out) if out.ndim == 0 else out


def log_neg_exponential(x, y, exprs: Sequence[Expression], gamma: float,
                        tau0: float, tau1: float) -> float:
    """Unnormalized log-density penalizing membership in the forbidden set.

    The set is intersection-defined: y is forbidden iff every g_i(x, y) <= 0.
    The value is ``-gamma * prod_i soft_indicator(g_i)``: close to ``-gamma``
    deep inside the forbidden set and close to 0 far outside it.
    """
    if gamma <= 0:
        raise PriorError("neg-exponential gamma must be positive")
    prod = 1.0
    for i, g in enumerate(exprs):
        val = float(g(x, y))
        if not np.isfinite(val):
            raise PriorError(f"inequality {i} evaluated to a non-finite value")
        prod *= soft_indicator(val, tau0, tau1)
    return -gamma * prod


# ---------------------------------------------------------------------------
# Per-constraint prior terms over a frozen anchor sample


@dataclass(frozen=True)
class GmmParams:
    means: tuple  # floats or input expressions
    sd: float
    weights: tuple | None = None


@dataclass(frozen=True)
class DirichletParams:
    gamma: float
    c: float


@dataclass(frozen=True)
class NegExpParams:
    gamma: float
    tau0: float
    tau1: float


class ConstraintTerm:
    """One constraint's contribution to the prior on a frozen point sample.

    Precomputes everything that depends only on the anchor points so that
    per-``w`` evaluation reduces to a forward pass, a cheap family density,
    and one reverse-mode sweep.
    """

    def __init__(self, constraint: Constraint, family: str, params,
                 sample: ConstraintSample, arch: NetworkArch):
        self.constraint = constraint
        self.family = family
        self.params = params
        self.sample = sample
        self.arch = arch
        self.points = np.ascontiguousarray(sample.points)
        t = self.points.shape[0]

        if family == "gmm":
            if arch.task != "regression":
                raise PriorError("gmm family applies to regression heads")
            cols = []
            for m in params.means:
                if isinstance(m, Expression):
                    cols.append(np.broadcast_to(np.asarray(m(self.points), dtype=np.float64), (t,)))
                else:
                    cols.append(np.full(t, float(m)))
            self._means = np.stack(cols, axis=1)  # (T, K)
            k = self._means.shape[1]
            self._weights = (np.full(k, 1.0 / k) if params.weights is None
                             else np.asarray(params.weights, dtype=np.float64))
            if abs(self._weights.sum() - 1.0) > SIMPLEX_TOL:
                raise PriorError("mixture weights must sum to 1")
        elif family == "dirichlet":
            if arch.task not in ("k_class", "binary_logit"):
                raise PriorError("dirichlet family applies to classification heads")
            if not isinstance(constraint.rule, ValueSet):
                raise PriorError("dirichlet family needs a class-set rule")
            n_classes = arch.n_classes if arch.task == "k_class" else 2
            allowed = [int(v) for v in constraint.rule.values]
            if constraint.polarity == "negative":
                allowed = [k for k in range(n_classes) if k not in set(allowed)]
                if not allowed:
                    raise PriorError("negative class constraint forbids every class")
            self._alphas = dirichlet_alphas(n_classes, allowed, params.gamma, params.c)
        elif family == "neg_exp":
            if arch.task != "regression":
                raise PriorError("neg-exponential family applies to regression heads")
            if not isinstance(constraint.rule, InequalityList):
                raise PriorError("neg-exponential family needs an inequality rule")
            if params.gamma <= 0 or params.tau0 <= 0 or params.tau1 <= 0:
                raise PriorError("neg-exponential parameters must be positive")
            self._exprs = constraint.rule.exprs
        elif family == "dist":
            dist = constraint.dist
            if isinstance(dist, GaussianDist):
                if arch.task != "regression":
                    raise PriorError("gaussian target applies to regression heads")
                self._target_mean = dist.mean_at(self.points)
                self._target_sd = float(dist.sd)
            elif isinstance(dist, BernoulliDist):
                if arch.task != "binary_logit":
                    raise PriorError("bernoulli target applies to binary heads")
                self._target_p = dist.p_at(self.points)
            elif isinstance(dist, CategoricalDist):
                if arch.task != "k_class":
                    raise PriorError("categorical target applies to k-class heads")
                self._target_probs = dist.probs_at(self.points)
                if self._target_probs.shape[1] != arch.n_classes:
                    raise PriorError("categorical target has the wrong number of classes")
            else:
                raise PriorError("probabilistic constraint lacks a distribution")
        else:
            raise PriorError(f"unknown prior family {family!r}")

    # -- per-point log densities given raw head outputs (T, out_dim)

    def log_terms(self, raw: np.ndarray) -> np.ndarray:
        if self.family == "gmm":
            return log_gmm_positive(raw[:, 0], self._means, self._weights, self.params.sd)
        if self.family == "dirichlet":
            probs = self._probs(raw)
            return log_dirichlet(probs, self._alphas)
        if self.family == "neg_exp":
            prod, _ = self._negexp_products(raw[:, 0])
            return -self.params.gamma * prod
        return self._dist_log_terms(raw)

    def out_grad(self, raw: np.ndarray) -> np.ndarray:
        """d(sum of log terms)/d(raw outputs), shape like ``raw``."""
        if self.family == "gmm":
            return dlog_gmm_dy(raw[:, 0], self._means, self._weights,
                               self.params.sd).reshape(-1, 1)
        if self.family == "dirichlet":
            probs = self._probs(raw)
            excess = self._alphas - 1.0
            if self.arch.task == "k_class":
                return excess - probs * excess.sum()
            p1 = probs[:, 1]
            return (excess[1] * (1.0 - p1) - excess[0] * p1).reshape(-1, 1)
        if self.family == "neg_exp":
            y = raw[:, 0]
            _, svals = self._negexp_products(y)
            grad = np.zeros_like(y)
            for i, g in enumerate(self._exprs):
                others = np.ones_like(y)
                for j in range(len(self._exprs)):
                    if j != i:
                        others = others * svals[j]
                gv = np.asarray(g(self.points, y), dtype=np.float64)
                dg = np.asarray(g.dy(self.points, y), dtype=np.float64)
                grad += dsoft_indicator(gv, self.params.tau0, self.params.tau1) * dg * others
            return (-self.params.gamma * grad).reshape(-1, 1)
        return self._dist_out_grad(raw)

    def _probs(self, raw: np.ndarray) -> np.ndarray:
        if self.arch.task == "k_class":
            return softmax(raw)
        p1 = sigmoid(raw[:, 0])
        return np.stack([1.0 - p1, p1], axis=1)

    def _negexp_products(self, y: np.ndarray):
        svals = []
        for i, g in enumerate(self._exprs):
            gv = np.broadcast_to(np.asarray(g(self.points, y), dtype=np.float64), y.shape)
            if not np.all(np.isfinite(gv)):
                raise PriorError(f"inequality {i} evaluated to a non-finite value")
            svals.append(soft_indicator(gv, self.params.tau0, self.params.tau1))
        prod = np.ones_like(y)
        for s in svals:
            prod = prod * s
        return prod, svals

    def _dist_log_terms(self, raw: np.ndarray) -> np.ndarray:
        dist = self.constraint.dist
        if isinstance(dist, GaussianDist):
            z = (raw[:, 0] - self._target_mean) / self._target_sd
            return -0.5 * z * z - np.log(self._target_sd) - 0.5 * _LOG_2PI
        if isinstance(dist, BernoulliDist):
            s = np.clip(sigmoid(raw[:, 0]), PROB_FLOOR, 1.0 - PROB_FLOOR)
            p = self._target_p
            return p * np.log(s) + (1.0 - p) * np.log(1.0 - s)
        probs = np.clip(softmax(raw), PROB_FLOOR, 1.0)
        return np.sum(self._target_probs * np.log(probs), axis=1)

    def _dist_out_grad(self, raw: np.ndarray) -> np.ndarray:
        dist = self.constraint.dist
        if isinstance(dist, GaussianDist):
            return ((self._target_mean - raw[:, 0]) / self._target_sd ** 2).reshape(-1, 1)
        if isinstance(dist, BernoulliDist):
            s = sigmoid(raw[:, 0])
            return (self._target_p - s).reshape(-1, 1)
        return self._target_probs - softmax(raw)


def build_constraint_term(constraint: Constraint, family: str, params,
                    sample: ConstraintSample, arch: NetworkArch) -> ConstraintTerm:
    if constraint.polarity == "probabilistic" and family != "dist":
        raise PriorError("probabilistic constraints use their own distribution (family 'dist')")
    return ConstraintTerm(constraint, family, params, sample, arch)


def log_constrained_prior(arch: NetworkArch, w: np.ndarray, base_sd: float,
             terms: Sequence[ConstraintTerm]) -> float:
    """Base prior plus all per-constraint, per-anchor-point log densities."""
    total = log_base_prior(w, base_sd)
    w = np.ascontiguousarray(np.asarray(w, dtype=np.float64))
    for term in terms:
        raw = kernels.forward_batch(w, arch.sizes, term.points)
        total += float(np.sum(term.log_terms(raw)))
    return total


def grad_log_constrained_prior(arch: NetworkArch, w: np.ndarray, base_sd: float,
                  terms: Sequence[ConstraintTerm]) -> np.ndarray:
    w = np.ascontiguousarray(np.asarray(w, dtype=np.float64))
    grad = grad_log_base_prior(w, base_sd)
    for term in terms:
        raw = kernels.forward_batch(w, arch.sizes, term.points)
        out_grad = np.ascontiguousarray(term.out_grad(raw))
        _, g = kernels.vjp_batch(w, arch.sizes, term.points, out_grad)
        grad = grad + g
    return grad


# ---------------------------------------------------------------------------
# Prior objects consumed by the inference backends


class IsotropicGaussianPrior:
    """Zero-mean isotropic Gaussian over the flat parameter vector."""

    def __init__(self, sd: float, dim: int):
        if sd <= 0:
            raise PriorError("sd must be positive")
        self.sd = float(sd)
        self.dim = int(dim)

    def log_density(self, w: np.ndarray) -> float:
        return log_base_prior(w, self.sd)

    def grad_log_density(self, w: np.ndarray) -> np.ndarray:
        return grad_log_base_prior(w, self.sd)

    def gaussian_moments(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(self.dim), np.full(self.dim, self.sd)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(0.0, self.sd, size=(n, self.dim))


class DiagonalGaussianPrior:
    """Mean-field Gaussian prior (used for the amortized constrained prior)."""

    def __init__(self, mu: np.ndarray, sigma: np.ndarray):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma = np.asarray(sigma, dtype=np.float64)
        if np.any(self.sigma <= 0):
            raise PriorError("sigma must be positive elementwise")
        self.dim = self.mu.shape[0]

    def log_density(self, w: np.ndarray) -> float:
        z = (np.asarray(w, dtype=np.float64) - self.mu) / self.sigma
        return float(-0.5 * np.sum(z * z) - np.sum(np.log(self.sigma))
                     - 0.5 * self.dim * _LOG_2PI)

    def grad_log_density(self, w: np.ndarray) -> np.ndarray:
        return (self.mu - np.asarray(w, dtype=np.float64)) / self.sigma ** 2

    def gaussian_moments(self) -> tuple[np.ndarray, np.ndarray]:
        return self.mu.copy(), self.sigma.copy()

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mu + self.sigma * rng.standard_normal((n, self.dim))


class SampledConstraintPrior:
    """Sampled-constraint prior: Gaussian base times frozen constraint terms.

    Anchor points are frozen at construction. For ablations,
    ``resample_every`` > 0 redraws every term's anchors from its region after
    that many density/gradient evaluations (off by default; this makes the
    density stochastic, so samplers relying on exact detailed balance should
    keep it off).
    """

    def __init__(self, arch: NetworkArch, base_sd: float, terms: Sequence[ConstraintTerm],
                 resample_every: int = 0, resample_seed: int = 0):
        self.arch = arch
        self.base_sd = float(base_sd)
        self.terms = list(terms)
        self.dim = arch.n_params
        self.resample_every = int(resample_every)
        self._rng = np.random.default_rng(resample_seed)
        self._calls = 0

    def _maybe_resample(self) -> None:
        if not self.resample_every:
            return
        self._calls += 1
        if self._calls % self.resample_every:
            return
        from .constraints import sample_region

        self.terms = [
            build_constraint_term(
                t.constraint, t.family, t.params,
                sample_region(t.constraint.region, len(t.sample),
                              int(self._rng.integers(2 ** 62))),
                self.arch,
            )
            for t in self.terms
        ]

    def log_density(self, w: np.ndarray) -> float:
        self._maybe_resample()
        return log_constrained_prior(self.arch, w, self.base_sd, self.terms)

    def grad_log_density(self, w: np.ndarray) -> np.ndarray:
        self._maybe_resample()
        return grad_log_constrained_prior(self.arch, w, self.base_sd, self.terms)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # proposal from the base Gaussian; the constraint factor reweights the
        # posterior during inference, not this initialization draw
        return rng.normal(0.0, self.base_sd, size=(n, self.dim))
