"""Black-box posterior samplers over ``log p(w) + log p(data | w)``.

All three backends consume a *target*: any object exposing ``dim``,
``value(w) -> float`` and ``grad(w) -> (dim,)``. Targets may optionally
expose ``refresh_batch()``, which the stochastic backends call once per
iteration to rotate a likelihood minibatch. Everything is driven by an
explicit integer seed and is bit-reproducible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .network import (
    Dataset,
    NetworkArch,
    grad_log_likelihood,
    log_likelihood,
    predictive_probs,
    _read_header,
    _write_header,
)
from .optim import AdaGrad
from .amortized import VariationalParams

SAMPLES_MAGIC = b"OCPS"
MAX_STEP_SHRINKS = 60


class InferenceError(RuntimeError):
    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class PosteriorSamples:
    """Finite parameter-vector ensemble with sampler diagnostics."""

    samples: np.ndarray  # (S, M)
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.shape[0] < 1:
            raise InferenceError("need at least one posterior sample")
        if not np.all(np.isfinite(self.samples)):
            raise InferenceError("posterior samples contain non-finite values")

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class FunctionTarget:
    """Plain log-density target from value/grad callables."""

    dim: int
    value_fn: Callable[[np.ndarray], float]
    grad_fn: Callable[[np.ndarray], np.ndarray]

    def value(self, w):
        return self.value_fn(w)

    def grad(self, w):
        return self.grad_fn(w)


class BnnLikelihood:
    """Dataset log-likelihood of a network, optionally minibatched.

    With a batch size set, ``value``/``grad`` evaluate the current minibatch
    scaled by N/batch; ``refresh_batch`` rotates it deterministically from
    the seed. ``full_value``/``full_grad`` always use the whole dataset.
    """

    def __init__(self, arch: NetworkArch, data: Dataset, batch_size: int | None = None,
                 batch_seed: int = 0):
        data.validate_for(arch)
        self.arch = arch
        self.data = data
        self.dim = arch.n_params
        n = len(data)
        self.batch_size = None if (batch_size is None or batch_size >= n or n == 0) else int(batch_size)
        self._rng = np.random.default_rng(batch_seed)
        self._batch = data
        self._scale = 1.0
        if self.batch_size:
            self.refresh_batch()

    def refresh_batch(self) -> None:
        if not self.batch_size:
            return
        idx = self._rng.choice(len(self.data), size=self.batch_size, replace=False)
        self._batch = Dataset(self.data.inputs[idx], self.data.targets[idx])
        self._scale = len(self.data) / self.batch_size

    def value(self, w) -> float:
        return self._scale * log_likelihood(self.arch, w, self._batch)

    def grad(self, w) -> np.ndarray:
        return self._scale * grad_log_likelihood(self.arch, w, self._batch)

    def full_value(self, w) -> float:
        return log_likelihood(self.arch, w, self.data)

    def full_grad(self, w) -> np.ndarray:
        return grad_log_likelihood(self.arch, w, self.data)


class BnnPosterior:
    """Log posterior: any prior with log_density/grad plus a BnnLikelihood."""

    def __init__(self, likelihood: BnnLikelihood, prior):
        self.likelihood = likelihood
        self.prior = prior
        self.arch = likelihood.arch
        self.dim = likelihood.dim

    def refresh_batch(self) -> None:
        self.likelihood.refresh_batch()

    def value(self, w) -> float:
        return self.prior.log_density(w) + self.likelihood.value(w)

    def grad(self, w) -> np.ndarray:
        return self.prior.grad_log_density(w) + self.likelihood.grad(w)

    def full_value(self, w) -> float:
        return self.prior.log_density(w) + self.likelihood.full_value(w)

    def full_grad(self, w) -> np.ndarray:
        return self.prior.grad_log_density(w) + self.likelihood.full_grad(w)


# ---------------------------------------------------------------------------
# Hamiltonian Monte Carlo


def leapfrog(grad_fn, w: np.ndarray, p: np.ndarray, n_steps: int, step: float):
    """Standard leapfrog integration of (w, p); time-reversible."""
    w = w.copy()
    p = p + 0.5 * step * grad_fn(w)
    for i in range(n_steps):
        w = w + step * p
        if i < n_steps - 1:
            p = p + step * grad_fn(w)
    p = p + 0.5 * step * grad_fn(w)
    return w, p


def hmc(
    target,
    init: np.ndarray,
    *,
    burn_in: int,
    n_collect: int,
    thin: int = 10,
    n_leapfrog: int = 50,
    step_size: float = 0.1,
    target_accept: float = 0.9,
    seed: int = 0,
    adapt: bool = True,
) -> PosteriorSamples:
    """Metropolis-Hastings with Hamiltonian proposals and identity mass.

    The step size is adapted multiplicatively toward ``target_accept``
    during burn-in only (x1.02 when the running acceptance estimate is above
    target, x0.98 below), then frozen. A non-finite Hamiltonian rejects the
    proposal and halves the step size; repeated failures raise.
    """
    rng = np.random.default_rng(seed)
    w = np.asarray(init, dtype=np.float64).copy()
    logp = target.value(w)
    if not np.isfinite(logp):
        raise InferenceError("initial state has non-finite log density")
    step = float(step_size)
    accepted = 0
    iterations = 0
    accept_est = target_accept
    consecutive_shrinks = 0
    collected = []

    def mh_step(adapting: bool):
        nonlocal w, logp, step, accepted, iterations, accept_est, consecutive_shrinks
        iterations += 1
        p0 = rng.standard_normal(w.shape[0])
        h0 = -logp + 0.5 * float(p0 @ p0)
        w1, p1 = leapfrog(target.grad, w, p0, n_leapfrog, step)
        logp1 = target.value(w1) if np.all(np.isfinite(w1)) else -np.inf
        h1 = -logp1 + 0.5 * float(p1 @ p1) if np.isfinite(logp1) else np.inf
        accept = False
        if not np.isfinite(h1):
            step *= 0.5
            consecutive_shrinks += 1
            if consecutive_shrinks > MAX_STEP_SHRINKS:
                raise InferenceError("leapfrog keeps diverging; step size underflow")
            rng.uniform()  # keep the random stream aligned with the accept draw
        else:
            consecutive_shrinks = 0
            accept = np.log(rng.uniform()) < h0 - h1
            if accept:
                w, logp = w1, logp1
                accepted += 1
        if adapting and adapt:
            accept_est = 0.95 * accept_est + 0.05 * (1.0 if accept else 0.0)
            step *= 1.02 if accept_est > target_accept else 0.98

    for _ in range(burn_in):
        mh_step(adapting=True)
    for _ in range(n_collect):
        for _ in range(thin):
            mh_step(adapting=False)
        collected.append(w.copy())

    return PosteriorSamples(
        samples=np.stack(collected),
        method="hmc",
        diagnostics={
            "accepted": accepted,
            "iterations": iterations,
            "acceptance_rate": accepted / iterations,
            "final_step_size": step,
            "burn_in": burn_in,
            "thin": thin,
            "n_leapfrog": n_leapfrog,
            "seed": seed,
        },
    )


# ---------------------------------------------------------------------------
# Stein variational gradient descent


def _svgd_bandwidth(sqdists: np.ndarray, n: int, floor: float) -> float:
    if n < 2:
        return floor
    off = sqdists[~np.eye(n, dtype=bool)]
    h = float(np.median(off)) / np.log(n + 1.0)
    return max(h, floor)


def svgd_phi(particles: np.ndarray, grads: np.ndarray, bandwidth_floor: float = 1e-6):
    """One SVGD direction: kernel-weighted gradients plus repulsion.

    With a single particle the kernel gradient vanishes identically and the
    direction is exactly the log-density gradient.
    """
    n = particles.shape[0]
    if n == 1:
        return grads.copy(), bandwidth_floor
    sq = np.sum(particles ** 2, axis=1)
    sqdists = sq[:, None] + sq[None, :] - 2.0 * particles @ particles.T
    np.maximum(sqdists, 0.0, out=sqdists)
    np.fill_diagonal(sqdists, 0.0)  # self-distances are zero by definition
    h = _svgd_bandwidth(sqdists, n, bandwidth_floor)
    kern = np.exp(-sqdists / h)
    ksum = kern.sum(axis=0)
    phi = (kern @ grads + (2.0 / h) * (particles * ksum[:, None] - kern @ particles)) / n
    return phi, h


def svgd(
    target,
    *,
    n_particles: int,
    n_iters: int,
    lr: float,
    seed: int = 0,
    init: np.ndarray | None = None,
    init_sd: float = 1.0,
    bandwidth_floor: float = 1e-6,
) -> PosteriorSamples:
    """Particle transport with an RBF kernel and median-heuristic bandwidth."""
    rng = np.random.default_rng(seed)
    if init is None:
        particles = rng.normal(0.0, init_sd, size=(n_particles, target.dim))
    else:
        particles = np.array(init, dtype=np.float64, copy=True)
        if particles.shape != (n_particles, target.dim):
            raise InferenceError("init particle matrix has the wrong shape")
    opt = AdaGrad(particles.shape, lr)
    h = bandwidth_floor
    for _ in range(n_iters):
        if hasattr(target, "refresh_batch"):
            target.refresh_batch()
        grads = np.stack([target.grad(p) for p in particles])
        if not np.all(np.isfinite(grads)):
            raise InferenceError("non-finite particle gradient")
        phi, h = svgd_phi(particles, grads, bandwidth_floor)
        particles = particles + opt.step(phi)
    return PosteriorSamples(
        samples=particles,
        method="svgd",
        diagnostics={
            "n_particles": n_particles,
            "iterations": n_iters,
            "final_bandwidth": h,
            "seed": seed,
        },
    )


# ---------------------------------------------------------------------------
# Stochastic variational inference via the reparameterization trick


@dataclass
class BbbResult:
    params: VariationalParams
    samples: PosteriorSamples
    elbo_history: list


def bbb(
    likelihood,
    prior,
    dim: int,
    *,
    epochs: int,
    lr: float,
    n_eps: int = 5,
    n_samples_out: int = 1000,
    seed: int = 0,
    init_mu: np.ndarray | float = 0.0,
    init_sigma: np.ndarray | float = 1.0,
) -> BbbResult:
    """Fit a mean-field Gaussian posterior by stochastic ELBO ascent.

    ``likelihood`` exposes value/grad of the data log-likelihood (may be
    minibatched via ``refresh_batch``); ``prior`` is any log-density with
    gradient. When the prior is diagonal-Gaussian (exposes
    ``gaussian_moments``) the KL term is computed in closed form; otherwise
    it is estimated with the same reparameterized draws as the likelihood.
    """
    rng = np.random.default_rng(seed)
    mu = np.full(dim, init_mu, dtype=np.float64) if np.ndim(init_mu) == 0 else np.array(init_mu, dtype=np.float64)
    sigma0 = np.full(dim, init_sigma, dtype=np.float64) if np.ndim(init_sigma) == 0 else np.array(init_sigma, dtype=np.float64)
    rho = np.log(sigma0)
    moments = prior.gaussian_moments() if hasattr(prior, "gaussian_moments") else None
    opt = AdaGrad(2 * dim, lr)
    history = []

    for epoch in range(epochs):
        if hasattr(likelihood, "refresh_batch"):
            likelihood.refresh_batch()
        sigma = np.exp(rho)
        d_mu = np.zeros(dim)
        d_sigma = np.zeros(dim)
        elbo = 0.0
        for _ in range(n_eps):
            eps = rng.standard_normal(dim)
            w = mu + sigma * eps
            glik = likelihood.grad(w)
            elbo += likelihood.value(w)
            d_mu += glik
            d_sigma += glik * eps
            if moments is None:
                gprior = prior.grad_log_density(w)
                d_mu += gprior
                d_sigma += gprior * eps + 1.0 / sigma
                elbo += prior.log_density(w) - _diag_gaussian_logpdf(w, mu, sigma)
        d_mu /= n_eps
        d_sigma /= n_eps
        elbo /= n_eps
        if moments is not None:
            m0, s0 = moments
            kl = _diag_gaussian_kl(mu, sigma, m0, s0)
            d_mu -= (mu - m0) / s0 ** 2
            d_sigma -= sigma / s0 ** 2 - 1.0 / sigma
            elbo -= kl
        if not np.isfinite(elbo):
            raise InferenceError(f"non-finite ELBO at epoch {epoch}", epoch=epoch)
        history.append(float(elbo))
        step = opt.step(np.concatenate([d_mu, d_sigma * sigma]))
        mu = mu + step[:dim]
        rho = rho + step[dim:]

    sigma = np.exp(rho)
    draws = mu + sigma * rng.standard_normal((n_samples_out, dim))
    lam = VariationalParams(mu, rho)
    samples = PosteriorSamples(
        samples=draws,
        method="bbb",
        diagnostics={"epochs": epochs, "final_elbo": history[-1], "seed": seed},
    )
    return BbbResult(params=lam, samples=samples, elbo_history=history)


def _diag_gaussian_logpdf(w, mu, sigma) -> float:
    z = (w - mu) / sigma
    return float(-0.5 * np.sum(z * z) - np.sum(np.log(sigma)) - 0.5 * w.size * np.log(2 * np.pi))


def _diag_gaussian_kl(mu, sigma, m0, s0) -> float:
    """KL( N(mu, sigma^2) || N(m0, s0^2) ), diagonal."""
    return float(np.sum(np.log(s0 / sigma) + (sigma ** 2 + (mu - m0) ** 2) / (2.0 * s0 ** 2) - 0.5))


# ---------------------------------------------------------------------------
# Posterior predictive


@dataclass
class PredictiveSummary:
    """Monte Carlo predictive at a batch of query points."""

    task: str
    query: np.ndarray                      # (n, Q)
    mean: np.ndarray | None = None         # (n,) regression
    quantiles: dict | None = None          # level -> (n,) regression
    sample_means: np.ndarray | None = None  # (S, n) regression
    probs: np.ndarray | None = None        # (n, K) classification


def posterior_predictive(
    samples: PosteriorSamples,
    arch: NetworkArch,
    x: np.ndarray,
    quantile_levels: Sequence[float] = (2.5, 50.0, 97.5),
    keep_sample_means: bool = True,
) -> PredictiveSummary:
    """Average the per-sample predictive over the ensemble (Monte Carlo).

    Regression reports the mean of per-sample means and their empirical
    quantiles; classification reports the averaged probability vector.
    """
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    outs = [kernels.forward_batch(np.ascontiguousarray(w), arch.sizes, x)
            for w in samples.samples]
    if arch.task == "regression":
        means = np.stack([o[:, 0] for o in outs])  # (S, n)
        quants = {lvl: np.percentile(means, lvl, axis=0) for lvl in quantile_levels}
        return PredictiveSummary(
            task=arch.task,
            query=x,
            mean=means.mean(axis=0),
            quantiles=quants,
            sample_means=means if keep_sample_means else None,
        )
    probs = np.mean([predictive_probs(arch, o) for o in outs], axis=0)
    return PredictiveSummary(task=arch.task, query=x, probs=probs)


def effective_sample_size(chain: np.ndarray) -> float:
    """ESS from the initial positive sequence of autocorrelations."""
    chain = np.asarray(chain, dtype=np.float64)
    n = chain.shape[0]
    if n < 4:
        return float(n)
    centered = chain - chain.mean()
    acov = np.correlate(centered, centered, mode="full")[n - 1:] / n
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    s = 0.0
    for k in range(1, n - 2, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        s += pair
    return float(n / (1.0 + 2.0 * s))


# ---------------------------------------------------------------------------
# Sample files: JSON header + little-endian float64 payload


def save_samples(path, arch: NetworkArch, samples: PosteriorSamples,
                 config_hash: str = "") -> None:
    arr = samples.samples
    header = {
        "arch": arch.fingerprint(),
        "method": samples.method,
        "diagnostics": _plain_json(samples.diagnostics),
        "n_samples": int(arr.shape[0]),
        "n_params": int(arr.shape[1]),
    }
    if config_hash:
        header["config_hash"] = config_hash
    with open(path, "wb") as fh:
        _write_header(fh, SAMPLES_MAGIC, header)
        fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f8").tobytes())


def load_samples(path, expected_arch: NetworkArch | None = None
                 ) -> tuple[NetworkArch, PosteriorSamples]:
    with open(path, "rb") as fh:
        header = _read_header(fh, SAMPLES_MAGIC)
        arch = NetworkArch.from_fingerprint(header["arch"])
        if expected_arch is not None and arch.fingerprint() != expected_arch.fingerprint():
            raise ValueError("sample file was written for a different architecture")
        s, m = struct.unpack("<QQ", fh.read(16))
        arr = np.frombuffer(fh.read(8 * s * m), dtype="<f8").reshape(s, m).astype(np.float64)
    if m != arch.n_params:
        raise ValueError("sample payload does not match the architecture")
    return arch, PosteriorSamples(samples=arr, method=header["method"],
                                  diagnostics=header.get("diagnostics", {}))


def _plain_json(obj):
    return json.loads(json.dumps(obj, default=float))
