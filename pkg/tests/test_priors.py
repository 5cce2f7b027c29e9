"""Prior densities: frozen oracle values, gradients, and exchangeability."""

import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from ocbnn.constraints import (
    BernoulliDist,
    Constraint,
    ConstraintSample,
    GaussianDist,
    InequalityList,
    InputRegion,
    ValueSet,
    sample_region,
)
from ocbnn.expressions import Expression
from ocbnn.network import NetworkArch, flatten_layers, random_params, unflatten, zero_params
from ocbnn.priors import (
    SampledConstraintPrior,
    DiagonalGaussianPrior,
    DirichletParams,
    GmmParams,
    IsotropicGaussianPrior,
    NegExpParams,
    PriorError,
    build_constraint_term,
    dirichlet_alphas,
    grad_log_base_prior,
    grad_log_constrained_prior,
    log_base_prior,
    log_constrained_prior,
    log_dirichlet_positive,
    log_gmm_positive,
    log_neg_exponential,
    soft_indicator,
)

from conftest import central_diff, rel_err


class TestBasePrior:
    def test_standard_normal_at_zero(self):
        # single-coordinate standard normal density at its mode
        assert log_base_prior(np.zeros(1), 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi))
        assert log_base_prior(np.zeros(1), 1.0) == pytest.approx(
            stats.norm.logpdf(0.0), abs=1e-12)

    def test_quadratic_form_identity(self, rng):
        sd = 1.7
        w = rng.normal(size=12)
        diff = log_base_prior(w, sd) - log_base_prior(np.zeros_like(w), sd)
        assert diff == pytest.approx(-float(w @ w) / (2 * sd ** 2), abs=1e-12)

    def test_additive_over_concatenation(self, rng):
        a, b = rng.normal(size=5), rng.normal(size=8)
        total = log_base_prior(np.concatenate([a, b]), 0.6)
        assert total == pytest.approx(log_base_prior(a, 0.6) + log_base_prior(b, 0.6))

    def test_gradient(self, rng):
        w = rng.normal(size=7)
        np.testing.assert_allclose(grad_log_base_prior(w, 2.0), -w / 4.0)


class TestGmm:
    def test_single_component_at_mean(self):
        # scale 1.25 mixture evaluated at its single mean
        want = -math.log(1.25 * math.sqrt(2 * math.pi))
        assert log_gmm_positive(2.0, [2.0], None, 1.25) == pytest.approx(want, abs=1e-12)
        assert want == pytest.approx(stats.norm.logpdf(0.0, scale=1.25), abs=1e-12)

    def test_symmetric_pair_at_midpoint(self):
        d = 3.0
        got = log_gmm_positive(0.0, [-d / 2, d / 2], [0.5, 0.5], 1.1)
        want = math.log(2 * 0.5 * stats.norm.pdf(d / 2, scale=1.1))
        assert got == pytest.approx(want, abs=1e-12)

    def test_tail_monotone_to_minus_infinity(self):
        vals = [log_gmm_positive(y, [0.0, 1.0], None, 0.8) for y in (2.0, 5.0, 20.0, 100.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_matches_scipy_mixture_oracle(self, rng):
        means = np.array([-1.0, 0.5, 2.0])
        weights = np.array([0.2, 0.3, 0.5])
        for y in rng.normal(0, 2, size=10):
            want = math.log(np.sum(weights * stats.norm.pdf(y, means, 0.9)))
            assert log_gmm_positive(float(y), means, weights, 0.9) == pytest.approx(want)

    def test_component_permutation_invariance(self):
        means, weights = [0.0, 1.0, -2.0], [0.5, 0.2, 0.3]
        perm = [2, 0, 1]
        a = log_gmm_positive(0.3, means, weights, 1.0)
        b = log_gmm_positive(0.3, [means[i] for i in perm], [weights[i] for i in perm], 1.0)
        assert a == pytest.approx(b, abs=1e-12)

    def test_bad_weights_rejected(self):
        with pytest.raises(PriorError):
            log_gmm_positive(0.0, [0.0, 1.0], [0.9, 0.2], 1.0)


class TestDirichlet:
    def test_flat_dirichlet_is_constant_log_gamma_k(self):
        # all concentrations equal to one: density is Gamma(K) everywhere
        alphas = np.ones(4)
        from ocbnn.priors import log_dirichlet
        for p in ([0.25, 0.25, 0.25, 0.25], [0.7, 0.1, 0.1, 0.1]):
            assert log_dirichlet(np.array(p), alphas) == pytest.approx(math.lgamma(4), abs=1e-9)

    def test_concentrated_beats_uniform_for_allowed_class(self):
        # binary head with concentrations (2, 40): mass piled on class 1
        sharp = log_dirichlet_positive([0.05, 0.95], [1], 40.0, 0.95)
        flat = log_dirichlet_positive([0.5, 0.5], [1], 40.0, 0.95)
        assert sharp > flat

    def test_three_class_value_against_scipy(self):
        alphas = dirichlet_alphas(3, [2], 10.0, 0.85)
        np.testing.assert_allclose(alphas, [1.5, 1.5, 10.0])
        p = np.array([0.05, 0.05, 0.9])
        want = stats.dirichlet.logpdf(p, alphas)
        assert log_dirichlet_positive(p, [2], 10.0, 0.85) == pytest.approx(want, rel=1e-10)

    def test_off_simplex_rejected(self):
        with pytest.raises(PriorError):
            log_dirichlet_positive([0.5, 0.6], [0], 2.0, 0.5)

    def test_parameter_bounds(self):
        with pytest.raises(PriorError):
            dirichlet_alphas(2, [0], 0.5, 0.5)  # gamma below one
        with pytest.raises(PriorError):
            dirichlet_alphas(2, [0], 2.0, 1.5)  # c outside (0, 1)
        with pytest.raises(PriorError):
            dirichlet_alphas(2, [], 2.0, 0.5)

    def test_boundary_clamped_to_finite(self):
        val = log_dirichlet_positive([1.0, 0.0], [0], 5.0, 0.5)
        assert np.isfinite(val)


class TestSoftIndicator:
    def test_zero_crossing_value(self):
        assert soft_indicator(0.0, 15.0, 2.0) == pytest.approx(0.25, abs=1e-15)

    def test_limits(self):
        assert soft_indicator(-50.0, 1.0, 1.0) == pytest.approx(1.0, abs=1e-12)
        assert soft_indicator(50.0, 1.0, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_sharp_temperature_value_against_mpmath(self):
        # extended-precision oracle for tau = (15, 2) at z = 1
        with mpmath.workdps(60):
            want = float(mpmath.mpf(1) / 4
                         * (mpmath.tanh(-15) + 1) * (mpmath.tanh(-2) + 1))
        got = soft_indicator(1.0, 15.0, 2.0)
        assert got == pytest.approx(want, rel=1e-10)
        assert 1e-15 < got < 2e-15

    def test_bounds_and_monotonicity(self, rng):
        z = np.sort(rng.uniform(-5, 5, size=10000))
        vals = soft_indicator(z, 3.0, 0.7)
        assert np.all((vals >= 0.0) & (vals <= 1.0))
        assert np.all(np.diff(vals) <= 1e-15)  # nonincreasing

    def test_positive_temperatures_required(self):
        with pytest.raises(PriorError):
            soft_indicator(0.0, -1.0, 1.0)


class TestNegativeExponential:
    EXPRS = (Expression("1 - y"), Expression("y - 2.5"))  # forbidden band [1, 2.5]

    def test_far_outside_forbidden_set_is_zero(self):
        # both inequalities strongly violated: density ratio approaches one
        assert log_neg_exponential([0.0], 10.0, self.EXPRS, 100.0, 15.0, 2.0) == pytest.approx(0.0, abs=1e-6)

    def test_single_active_boundary(self):
        got = log_neg_exponential([0.0], 0.0, (Expression("y"),), 8.0, 15.0, 2.0)
        assert got == pytest.approx(-8.0 / 4.0)

    def test_deep_inside_forbidden_set(self):
        # a single inequality g = y, evaluated far below zero: the soft
        # indicator saturates at one and the log-density reaches -gamma
        assert log_neg_exponential([0.0], -50.0, (Expression("y"),), 100.0, 15.0, 2.0) == pytest.approx(
            -100.0, rel=1e-12)
        # inside the band the indicators multiply but stay short of one
        mid = log_neg_exponential([0.0], 1.75, self.EXPRS, 100.0, 15.0, 2.0)
        assert -100.0 < mid < -85.0

    def test_nonfinite_inequality_reports_index(self):
        bad = (Expression("y"), Expression("1 / (y - 1)"))
        with pytest.raises(PriorError, match="1"):
            log_neg_exponential([0.0], 1.0, bad, 5.0, 15.0, 2.0)


def _band_term(arch, n_points=7, gamma=10000.0, seed=5):
    region = InputRegion(kind="box", lower=[-0.3], upper=[0.3])
    constraint = Constraint(
        region=region, polarity="negative",
        rule=InequalityList(exprs=(Expression("(y - 2.5) * (3 - y)"),)),
    )
    sample = sample_region(region, n_points, seed)
    return build_constraint_term(constraint, "neg_exp",
                           NegExpParams(gamma, 15.0, 2.0), sample, arch)


def _constant_output_params(arch, value):
    layers = unflatten(arch, zero_params(arch))
    layers[-1][1][:] = value
    return flatten_layers(arch, layers)


class TestLogCocp:
    def test_no_constraints_equals_base_prior(self, small_regression_arch, rng):
        w = random_params(small_regression_arch, 1.0, rng)
        assert log_constrained_prior(small_regression_arch, w, 1.3, []) == pytest.approx(
            log_base_prior(w, 1.3))

    def test_duplicated_anchor_point_doubles_term(self, small_regression_arch, rng):
        arch = small_regression_arch
        region = InputRegion(kind="box", lower=[0.1], upper=[0.1])
        constraint = Constraint(region=region, polarity="negative",
                                rule=InequalityList(exprs=(Expression("(y - 2.5) * (3 - y)"),)))
        single = ConstraintSample(points=np.array([[0.1]]), seed=0)
        double = ConstraintSample(points=np.array([[0.1], [0.1]]), seed=0)
        params = NegExpParams(100.0, 15.0, 2.0)
        w = random_params(arch, 0.8, rng)
        base = log_base_prior(w, 1.0)
        t1 = log_constrained_prior(arch, w, 1.0, [build_constraint_term(constraint, "neg_exp", params, single, arch)])
        t2 = log_constrained_prior(arch, w, 1.0, [build_constraint_term(constraint, "neg_exp", params, double, arch)])
        assert t2 - base == pytest.approx(2.0 * (t1 - base), rel=1e-12)

    def test_band_prior_prefers_gap_over_forbidden_outputs(self, small_regression_arch):
        # constant-output networks: the permitted gap (2.5, 3) scores higher
        arch = small_regression_arch
        term = _band_term(arch)
        inside_gap = _constant_output_params(arch, 2.75)
        in_forbidden = _constant_output_params(arch, 2.3)
        near_edge = _constant_output_params(arch, 2.6)
        scores = {v: log_constrained_prior(arch, w, 1.0, [term])
                  for v, w in (("2.75", inside_gap), ("2.3", in_forbidden), ("2.6", near_edge))}
        assert scores["2.75"] > scores["2.6"] > scores["2.3"]
        # oracle: direct evaluation of the unnormalized density at a constant output
        t = len(term.sample)
        for v, w in (("2.75", inside_gap), ("2.3", in_forbidden)):
            y = float(v)
            g = (y - 2.5) * (3.0 - y)
            want = log_base_prior(w, 1.0) + t * (-10000.0 * soft_indicator(g, 15.0, 2.0))
            assert scores[v] == pytest.approx(want, rel=1e-9)

    def test_anchor_and_constraint_permutation_invariance(self, small_regression_arch, rng):
        arch = small_regression_arch
        w = random_params(arch, 0.8, rng)
        region = InputRegion(kind="box", lower=[-0.3], upper=[0.3])
        constraint = Constraint(region=region, polarity="negative",
                                rule=InequalityList(exprs=(Expression("(y - 2.5) * (3 - y)"),)))
        pts = sample_region(region, 6, 9).points
        params = NegExpParams(50.0, 15.0, 2.0)
        t_fwd = build_constraint_term(constraint, "neg_exp", params,
                                ConstraintSample(points=pts, seed=9), arch)
        t_rev = build_constraint_term(constraint, "neg_exp", params,
                                ConstraintSample(points=pts[::-1].copy(), seed=9), arch)
        gmm_c = Constraint(region=region, polarity="positive", rule=ValueSet(values=(2.0,)))
        t_gmm = build_constraint_term(gmm_c, "gmm", GmmParams(means=(2.0,), sd=1.25),
                                ConstraintSample(points=pts, seed=9), arch)
        a = log_constrained_prior(arch, w, 1.0, [t_fwd, t_gmm])
        b = log_constrained_prior(arch, w, 1.0, [t_gmm, t_rev])
        assert a == pytest.approx(b, rel=1e-12)

    def test_family_task_mismatch_rejected(self, small_regression_arch):
        region = InputRegion(kind="box", lower=[0.0], upper=[1.0])
        c = Constraint(region=region, polarity="positive", rule=ValueSet(values=(1,)))
        sample = sample_region(region, 3, 0)
        with pytest.raises(PriorError):
            build_constraint_term(c, "dirichlet", DirichletParams(10.0, 0.5), sample,
                            small_regression_arch)

    def test_finite_for_finite_inputs(self, small_kclass_arch, rng):
        arch = small_kclass_arch
        region = InputRegion(kind="box", lower=[0.0, 0.0], upper=[1.0, 1.0])
        c = Constraint(region=region, polarity="positive", rule=ValueSet(values=(0,)))
        term = build_constraint_term(c, "dirichlet", DirichletParams(40.0, 0.95),
                               sample_region(region, 5, 1), arch)
        for _ in range(20):
            w = random_params(arch, 3.0, rng)  # saturating outputs
            assert np.isfinite(log_constrained_prior(arch, w, 1.0, [term]))


class TestGradLogCocp:
    def test_no_constraints_gives_gaussian_gradient(self, small_regression_arch, rng):
        w = random_params(small_regression_arch, 1.0, rng)
        np.testing.assert_allclose(
            grad_log_constrained_prior(small_regression_arch, w, 2.0, []), -w / 4.0)

    @pytest.mark.parametrize("family", ["neg_exp", "gmm", "dirichlet", "dist_gauss", "dist_bern"])
    def test_matches_finite_differences(self, family, rng):
        if family in ("neg_exp", "gmm", "dist_gauss"):
            arch = NetworkArch(1, (5,), "regression", noise_sd=0.1)
        elif family == "dist_bern":
            arch = NetworkArch(2, (4,), "binary_logit")
        else:
            arch = NetworkArch(2, (4,), "k_class", n_classes=3)
        q = arch.input_dim
        region = InputRegion(kind="box", lower=[-0.5] * q, upper=[0.5] * q)
        sample = sample_region(region, 6, 3)
        if family == "neg_exp":
            c = Constraint(region=region, polarity="negative",
                           rule=InequalityList(exprs=(Expression("(y - 2.5) * (3 - y)"),)))
            term = build_constraint_term(c, "neg_exp", NegExpParams(100.0, 15.0, 2.0), sample, arch)
        elif family == "gmm":
            c = Constraint(region=region, polarity="positive", rule=ValueSet(values=(2.0, 4.0)))
            term = build_constraint_term(c, "gmm", GmmParams(means=(2.0, 4.0), sd=1.25), sample, arch)
        elif family == "dirichlet":
            c = Constraint(region=region, polarity="positive", rule=ValueSet(values=(2,)))
            term = build_constraint_term(c, "dirichlet", DirichletParams(10.0, 0.85), sample, arch)
        elif family == "dist_gauss":
            c = Constraint(region=region, polarity="probabilistic",
                           dist=GaussianDist(mean=Expression("x_1"), sd=0.8))
            term = build_constraint_term(c, "dist", None, sample, arch)
        else:
            c = Constraint(region=region, polarity="probabilistic",
                           dist=BernoulliDist(p=Expression("x_2 + 0.2")))
            term = build_constraint_term(c, "dist", None, sample, arch)
        w = random_params(arch, 0.7, rng)
        got = grad_log_constrained_prior(arch, w, 1.0, [term])
        fd = central_diff(lambda wv: log_constrained_prior(arch, wv, 1.0, [term]), w)
        assert rel_err(got, fd, floor=1e-6) < 1e-4

    def test_duplicated_points_double_constraint_gradient(self, small_regression_arch, rng):
        arch = small_regression_arch
        region = InputRegion(kind="box", lower=[0.1], upper=[0.1])
        c = Constraint(region=region, polarity="negative",
                       rule=InequalityList(exprs=(Expression("(y - 2.5) * (3 - y)"),)))
        params = NegExpParams(100.0, 15.0, 2.0)
        single = ConstraintSample(points=np.array([[0.1]]), seed=0)
        double = ConstraintSample(points=np.array([[0.1], [0.1]]), seed=0)
        w = random_params(arch, 0.8, rng)
        base = grad_log_base_prior(w, 1.0)
        g1 = grad_log_constrained_prior(arch, w, 1.0, [build_constraint_term(c, "neg_exp", params, single, arch)])
        g2 = grad_log_constrained_prior(arch, w, 1.0, [build_constraint_term(c, "neg_exp", params, double, arch)])
        np.testing.assert_allclose(g2 - base, 2.0 * (g1 - base), rtol=1e-10)


class TestPriorObjects:
    def test_isotropic_prior_moments_and_density(self, rng):
        prior = IsotropicGaussianPrior(0.5, 4)
        w = rng.normal(size=4)
        assert prior.log_density(w) == pytest.approx(log_base_prior(w, 0.5))
        m, s = prior.gaussian_moments()
        np.testing.assert_array_equal(m, np.zeros(4))
        np.testing.assert_array_equal(s, np.full(4, 0.5))

    def test_diagonal_prior_matches_scipy(self, rng):
        mu = rng.normal(size=3)
        sigma = np.abs(rng.normal(size=3)) + 0.1
        prior = DiagonalGaussianPrior(mu, sigma)
        w = rng.normal(size=3)
        want = float(np.sum(stats.norm.logpdf(w, mu, sigma)))
        assert prior.log_density(w) == pytest.approx(want, abs=1e-10)
        fd = central_diff(prior.log_density, w)
        np.testing.assert_allclose(prior.grad_log_density(w), fd, rtol=1e-6)

    def test_cocp_prior_wraps_functions(self, small_regression_arch, rng):
        arch = small_regression_arch
        term = _band_term(arch, gamma=100.0)
        prior = SampledConstraintPrior(arch, 1.0, [term])
        w = random_params(arch, 0.8, rng)
        assert prior.log_density(w) == pytest.approx(log_constrained_prior(arch, w, 1.0, [term]))
        np.testing.assert_array_equal(prior.grad_log_density(w),
                                      grad_log_constrained_prior(arch, w, 1.0, [term]))


class TestAnchorResampling:
    def test_frozen_by_default(self, small_regression_arch, rng):
        arch = small_regression_arch
        prior = SampledConstraintPrior(arch, 1.0, [_band_term(arch, gamma=100.0)])
        w = random_params(arch, 0.8, rng)
        vals = {prior.log_density(w) for _ in range(5)}
        assert len(vals) == 1

    def test_ablation_flag_redraws_anchors(self, small_regression_arch, rng):
        # a mixture with input-dependent means: the density depends on where
        # the anchors landed, so redraws must change it
        arch = small_regression_arch
        region = InputRegion(kind="box", lower=[-2.0], upper=[2.0])
        c = Constraint(region=region, polarity="positive", rule=ValueSet(values=(0.0,)))
        term = build_constraint_term(c, "gmm",
                               GmmParams(means=(Expression("x_1 * x_1"),), sd=0.5),
                               sample_region(region, 4, 0), arch)
        prior = SampledConstraintPrior(arch, 1.0, [term], resample_every=1, resample_seed=3)
        w = random_params(arch, 0.8, rng)
        vals = {prior.log_density(w) for _ in range(5)}
        assert len(vals) == 5  # anchors moved between evaluations
