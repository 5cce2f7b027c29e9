"""Evaluation metrics: violation, satisfaction mass, task metrics, rejection."""

import numpy as np
import pytest

from ocbnn.constraints import (
    Constraint,
    ConstraintSample,
    InequalityList,
    InputRegion,
    IntervalUnion,
    ValueSet,
    flip_polarity,
    sample_region,
)
from ocbnn.expressions import Expression
from ocbnn.inference import PosteriorSamples
from ocbnn.metrics import (
    MetricError,
    MetricReport,
    classification_metrics,
    effort_of_recourse,
    epsilon_satisfaction,
    group_positive_fraction,
    rejection_sample,
    violation_fraction,
)
from ocbnn.network import NetworkArch, flatten_layers, unflatten, zero_params


def constant_class_net(arch, cls, strength=60.0):
    layers = unflatten(arch, zero_params(arch))
    bias = np.zeros(arch.out_dim)
    if arch.task == "k_class":
        bias[cls] = strength
    else:
        bias[0] = strength if cls == 1 else -strength
    layers[-1][1][:] = bias
    return flatten_layers(arch, layers)


def constant_value_net(arch, value):
    layers = unflatten(arch, zero_params(arch))
    layers[-1][1][:] = value
    return flatten_layers(arch, layers)


@pytest.fixture
def kclass():
    return NetworkArch(2, (3,), "k_class", n_classes=3)


@pytest.fixture
def classset():
    return Constraint(
        region=InputRegion(kind="box", lower=[0.0, 0.0], upper=[1.0, 1.0]),
        polarity="positive",
        rule=ValueSet(values=(2,)),
    )


class TestViolationFraction:
    def test_constant_allowed_class_never_violates(self, kclass, classset):
        samples = PosteriorSamples(samples=constant_class_net(kclass, 2).reshape(1, -1),
                                   method="hmc")
        frac, violated = violation_fraction(samples, kclass, classset, 200, seed=0)
        assert frac == 0.0 and violated == 0

    def test_constant_forbidden_class_always_violates(self, kclass, classset):
        samples = PosteriorSamples(samples=constant_class_net(kclass, 0).reshape(1, -1),
                                   method="hmc")
        frac, violated = violation_fraction(samples, kclass, classset, 200, seed=0)
        assert frac == 1.0 and violated == 200

    def test_complement_identity(self, kclass, classset, rng):
        # violated fraction plus independently recounted satisfied fraction
        # is exactly one on the same sampled points
        from ocbnn.constraints import satisfies
        from ocbnn.metrics import point_predictions
        w = rng.normal(0, 1.0, size=(3, kclass.n_params))
        samples = PosteriorSamples(samples=w, method="svgd")
        frac, violated = violation_fraction(samples, kclass, classset, 333, seed=5)
        pts = sample_region(classset.region, 333, seed=5).points
        preds = point_predictions(samples, kclass, pts)
        satisfied = sum(satisfies(classset, x, int(p)) for x, p in zip(pts, preds))
        assert violated + satisfied == 333
        assert frac + satisfied / 333 == 1.0

    def test_probabilistic_rejected(self, kclass):
        from ocbnn.constraints import BernoulliDist
        c = Constraint(region=InputRegion(kind="box", lower=[0.0, 0.0], upper=[1.0, 1.0]),
                       polarity="probabilistic", dist=BernoulliDist(p=0.5))
        samples = PosteriorSamples(samples=np.zeros((1, kclass.n_params)), method="hmc")
        with pytest.raises(MetricError):
            violation_fraction(samples, kclass, c, 10, seed=0)


class TestEpsilonSatisfaction:
    def test_all_classes_allowed_full_mass(self, kclass, rng):
        c = Constraint(region=InputRegion(kind="box", lower=[0.0, 0.0], upper=[1.0, 1.0]),
                       polarity="positive", rule=ValueSet(values=(0, 1, 2)))
        samples = PosteriorSamples(samples=rng.normal(size=(4, kclass.n_params)), method="hmc")
        assert epsilon_satisfaction(samples, kclass, c, [0.5, 0.5]) == pytest.approx(1.0)

    def test_negation_of_all_classes_gives_zero_mass(self, kclass, rng):
        # the complement of "everything allowed" is the empty permitted set
        c = Constraint(region=InputRegion(kind="box", lower=[0.0, 0.0], upper=[1.0, 1.0]),
                       polarity="negative", rule=ValueSet(values=(0, 1, 2)))
        samples = PosteriorSamples(samples=rng.normal(size=(4, kclass.n_params)), method="hmc")
        assert epsilon_satisfaction(samples, kclass, c, [0.5, 0.5]) == pytest.approx(0.0)

    def test_polarity_pair_sums_to_one(self, kclass, classset, rng):
        samples = PosteriorSamples(samples=rng.normal(size=(5, kclass.n_params)), method="hmc")
        a = epsilon_satisfaction(samples, kclass, classset, [0.2, 0.8])
        b = epsilon_satisfaction(samples, kclass, flip_polarity(classset), [0.2, 0.8])
        assert a + b == pytest.approx(1.0, abs=1e-9)

    def test_two_member_ensemble_wide_interval_no_noise(self):
        # one member inside a wide interval, one outside, noise-free: mass 1/2
        arch = NetworkArch(1, (2,), "regression", noise_sd=1e-300)
        inside = constant_value_net(arch, 0.5)
        outside = constant_value_net(arch, 10.0)
        samples = PosteriorSamples(samples=np.stack([inside, outside]), method="svgd")
        c = Constraint(region=InputRegion(kind="box", lower=[0.0], upper=[1.0]),
                       polarity="positive",
                       rule=IntervalUnion(intervals=((-2.0, 2.0),)))
        assert epsilon_satisfaction(samples, arch, c, [0.5]) == pytest.approx(0.5, abs=1e-12)

    def test_noise_mass_included_for_regression(self):
        # a constant prediction at an interval's edge leaves half its noise in
        arch = NetworkArch(1, (2,), "regression", noise_sd=0.3)
        samples = PosteriorSamples(samples=constant_value_net(arch, 1.0).reshape(1, -1),
                                   method="hmc")
        c = Constraint(region=InputRegion(kind="box", lower=[0.0], upper=[1.0]),
                       polarity="positive",
                       rule=IntervalUnion(intervals=((1.0, np.inf),)))
        assert epsilon_satisfaction(samples, arch, c, [0.5]) == pytest.approx(0.5, abs=1e-9)


class TestClassificationMetrics:
    def test_perfect_predictions(self):
        stats = classification_metrics([1, 0, 1, 0], [1, 0, 1, 0])
        assert stats == {"accuracy": 1.0, "f1": 1.0}

    def test_all_negative_with_positives_present(self):
        stats = classification_metrics([0, 0, 0], [0, 1, 1])
        assert stats["f1"] == 0.0

    def test_balanced_confusion_matrix(self):
        # TP = FP = FN = TN = 1
        stats = classification_metrics([1, 1, 0, 0], [1, 0, 1, 0])
        assert stats["accuracy"] == pytest.approx(0.5)
        assert stats["f1"] == pytest.approx(0.5)

    def test_degenerate_no_positives_anywhere(self):
        stats = classification_metrics([0, 0], [0, 0])
        assert stats["f1"] == 0.0 and stats["accuracy"] == 1.0


class TestGroupFractions:
    def test_symmetric_predictions_zero_gap(self):
        preds = [1, 0, 1, 0]
        group = [1, 1, 0, 0]
        stats = group_positive_fraction(preds, group)
        assert stats["fraction_group1"] == stats["fraction_group0"] == 0.5
        assert stats["gap"] == 0.0

    def test_extreme_split(self):
        stats = group_positive_fraction([1, 1, 0, 0], [1, 1, 0, 0])
        assert stats == {"fraction_group1": 1.0, "fraction_group0": 0.0, "gap": 1.0}

    def test_empty_group_raises_with_name(self):
        with pytest.raises(MetricError, match="group 0"):
            group_positive_fraction([1, 0], [1, 1])


class TestEffortOfRecourse:
    def test_two_point_case(self):
        effort = effort_of_recourse([1, 0], [0.6, 0.2], [True, True])
        assert effort == pytest.approx(0.4)

    def test_identical_distributions_zero(self):
        preds = [1, 0, 1, 0]
        feat = [0.3, 0.3, 0.7, 0.7]
        assert effort_of_recourse(preds, feat, [True] * 4) == pytest.approx(0.0)

    def test_one_sided_subset_raises(self):
        with pytest.raises(MetricError):
            effort_of_recourse([1, 1, 0], [0.1, 0.2, 0.3], [True, True, False])

    def test_subset_mask_respected(self):
        preds = [1, 0, 1, 0]
        feat = [0.9, 0.1, 100.0, -100.0]
        mask = [True, True, False, False]
        assert effort_of_recourse(preds, feat, mask) == pytest.approx(0.8)


class TestRejectionSampling:
    def band(self):
        return Constraint(
            region=InputRegion(kind="box", lower=[-1.0], upper=[1.0]),
            polarity="negative",
            rule=InequalityList(exprs=(Expression("1 - y"), Expression("y - 2.5"))),
        )

    def test_all_satisfying_rate_zero(self):
        arch = NetworkArch(1, (2,), "regression")
        samples = PosteriorSamples(
            samples=np.stack([constant_value_net(arch, 0.0), constant_value_net(arch, 3.0)]),
            method="svgd")
        check = sample_region(self.band().region, 20, seed=0)
        accepted, rate = rejection_sample(samples, arch, self.band(), check)
        assert rate == 0.0 and len(accepted) == 2

    def test_none_satisfying_rate_one_and_empty(self):
        arch = NetworkArch(1, (2,), "regression")
        samples = PosteriorSamples(samples=constant_value_net(arch, 1.75).reshape(1, -1),
                                   method="svgd")
        check = sample_region(self.band().region, 20, seed=0)
        accepted, rate = rejection_sample(samples, arch, self.band(), check)
        assert rate == 1.0 and accepted is None

    def test_rate_monotone_in_nested_check_sets(self, rng):
        arch = NetworkArch(1, (6,), "regression")
        samples = PosteriorSamples(samples=rng.normal(0, 1.2, size=(40, arch.n_params)),
                                   method="svgd")
        pts = sample_region(self.band().region, 64, seed=3).points
        rates = []
        for t in (4, 16, 64):
            check = ConstraintSample(points=pts[:t], seed=3)
            _, rate = rejection_sample(samples, arch, self.band(), check)
            rates.append(rate)
        assert rates[0] <= rates[1] <= rates[2]


def test_metric_report_json_round_trip():
    report = MetricReport(name="violation_fraction", value=0.25, constraint="band",
                          n=100, extras={"violated": 25})
    doc = report.to_json()
    assert doc == {"name": "violation_fraction", "value": 0.25,
                   "constraint": "band", "n": 100, "violated": 25}
