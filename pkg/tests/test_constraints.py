"""Constraint types, region sampling, satisfaction, and TOML loading."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocbnn.constraints import (
    BernoulliDist,
    Constraint,
    ConstraintError,
    InequalityList,
    InputRegion,
    IntervalUnion,
    SamplingInfeasibleError,
    ValueSet,
    constraint_from_dict,
    flip_polarity,
    grid_region,
    load_constraints,
    sample_region,
    satisfies,
)
from ocbnn.expressions import Expression


def band_constraint():
    # forbidden outputs outside (2.5, 3) for x in [-0.3, 0.3]
    return Constraint(
        region=InputRegion(kind="box", lower=[-0.3], upper=[0.3]),
        polarity="negative",
        rule=IntervalUnion(intervals=((-np.inf, 2.5), (3.0, np.inf))),
    )


class TestSampling:
    def test_degenerate_box_returns_copies(self):
        region = InputRegion(kind="box", lower=[1.5, -2.0], upper=[1.5, -2.0])
        sample = sample_region(region, 5, seed=0)
        np.testing.assert_array_equal(sample.points, np.tile([1.5, -2.0], (5, 1)))

    def test_box_support_containment(self):
        region = InputRegion(kind="box", lower=[0.0, 0.0], upper=[1.0, 1.0])
        sample = sample_region(region, 1000, seed=1)
        assert np.all(sample.points >= 0.0) and np.all(sample.points <= 1.0)

    def test_predicate_region_all_points_admitted(self):
        # same-sign quadrant pair with its bounding box
        region = InputRegion(
            kind="predicate",
            predicate=lambda x: np.asarray(x)[..., 0] * np.asarray(x)[..., 1] >= 0,
            lower=[-1.0, -1.0],
            upper=[1.0, 1.0],
        )
        sample = sample_region(region, 500, seed=2)
        assert np.all(sample.points[:, 0] * sample.points[:, 1] >= 0)

    def test_sampling_reproducible_bit_for_bit(self):
        region = InputRegion(kind="box", lower=[-2.0], upper=[3.0])
        a = sample_region(region, 64, seed=42)
        b = sample_region(region, 64, seed=42)
        np.testing.assert_array_equal(a.points, b.points)

    def test_infeasible_predicate_raises(self):
        region = InputRegion(
            kind="predicate",
            predicate=lambda x: np.asarray(x)[..., 0] > 2.0,  # outside the box
            lower=[0.0],
            upper=[1.0],
        )
        with pytest.raises(SamplingInfeasibleError):
            sample_region(region, 3, seed=0)

    def test_gaussian_walk_fallback_for_unbounded_region(self):
        region = InputRegion(kind="all", dim=2, walk_step=0.5)
        sample = sample_region(region, 20, seed=3)
        assert sample.points.shape == (20, 2)
        steps = np.diff(np.vstack([[0.0, 0.0], sample.points]), axis=0)
        assert np.std(steps) < 2.0  # increments at the configured scale

    def test_grid_region_endpoints(self):
        region = InputRegion(kind="box", lower=[-1.0], upper=[1.0])
        pts = grid_region(region, 5).points.ravel()
        np.testing.assert_allclose(pts, [-1.0, -0.5, 0.0, 0.5, 1.0])
        assert grid_region(region, 1).points.ravel() == pytest.approx([0.0])

    def test_needs_at_least_one_point(self):
        region = InputRegion(kind="box", lower=[0.0], upper=[1.0])
        with pytest.raises(ConstraintError):
            sample_region(region, 0, seed=0)


class TestSatisfies:
    def test_forbidden_band_examples(self):
        c = band_constraint()
        assert satisfies(c, [0.0], 2.7) is True    # inside the permitted gap
        assert satisfies(c, [0.0], 2.0) is False   # in the forbidden set

    def test_same_band_via_inequalities(self):
        c = Constraint(
            region=InputRegion(kind="box", lower=[-0.3], upper=[0.3]),
            polarity="negative",
            rule=InequalityList(exprs=(Expression("(y - 2.5) * (3 - y)"),)),
        )
        assert satisfies(c, [0.0], 2.7) is True
        assert satisfies(c, [0.0], 2.0) is False
        assert satisfies(c, [0.0], 3.4) is False

    def test_positive_value_set_membership(self):
        c = Constraint(
            region=InputRegion(kind="box", lower=[0.0], upper=[1.0]),
            polarity="positive",
            rule=ValueSet(values=(2,)),
        )
        assert satisfies(c, [0.5], 2) is True
        assert satisfies(c, [0.5], 1) is False

    def test_probabilistic_constraint_rejected(self):
        c = Constraint(
            region=InputRegion(kind="box", lower=[0.0], upper=[1.0]),
            polarity="probabilistic",
            dist=BernoulliDist(p=0.5),
        )
        with pytest.raises(ConstraintError):
            satisfies(c, [0.5], 1)

    @given(st.floats(-10, 10), st.floats(-0.3, 0.3))
    @settings(max_examples=200, deadline=None)
    def test_polarity_flip_duality(self, y, x):
        c = band_constraint()
        assert satisfies(c, [x], y) != satisfies(flip_polarity(c), [x], y)


class TestTypes:
    def test_inverted_box_rejected(self):
        with pytest.raises(ConstraintError):
            InputRegion(kind="box", lower=[1.0], upper=[0.0])

    def test_overlapping_intervals_rejected(self):
        with pytest.raises(ConstraintError):
            IntervalUnion(intervals=((0.0, 2.0), (1.0, 3.0)))

    def test_polarity_payload_validation(self):
        region = InputRegion(kind="box", lower=[0.0], upper=[1.0])
        with pytest.raises(ConstraintError):
            Constraint(region=region, polarity="negative", dist=BernoulliDist(p=0.5))
        with pytest.raises(ConstraintError):
            Constraint(region=region, polarity="probabilistic",
                       rule=ValueSet(values=(1,)))

    def test_per_input_interval_rule(self):
        rule = IntervalUnion(rule_fn=lambda x: [(0.0, np.inf)] if x[0] >= 0 else [(-np.inf, 0.0)])
        assert rule.member([1.0], 2.0)
        assert not rule.member([-1.0], 2.0)

    def test_expression_interval_bounds(self):
        rule = IntervalUnion(intervals=((Expression("x_1 - 1"), Expression("x_1 + 1")),))
        assert rule.intervals_at(np.array([3.0])) == [(2.0, 4.0)]


class TestTomlLoading:
    def test_round_trip_from_file(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text(
            """
[[constraints]]
name = "band"
polarity = "negative"
region = { kind = "box", lower = [-0.3], upper = [0.3] }
rule = { kind = "inequalities", exprs = ["(y - 2.5) * (3 - y)"] }

[[constraints]]
name = "parity"
polarity = "probabilistic"
region = { kind = "box", lower = [0.0, 0.0], upper = [1.0, 1.0] }
dist = { family = "bernoulli", p = "x_2" }
"""
        )
        cs = load_constraints(path)
        assert [c.name for c in cs] == ["band", "parity"]
        assert satisfies(cs[0], [0.0], 2.7)
        assert cs[1].dist.p_at(np.array([[0.5, 0.25]]))[0] == pytest.approx(0.25)

    def test_interval_rule_with_infinite_bounds(self):
        c = constraint_from_dict({
            "name": "halfline",
            "polarity": "positive",
            "region": {"kind": "box", "lower": [0.0], "upper": [1.0]},
            "rule": {"kind": "intervals", "intervals": [["-inf", 2.5], [3.0, "inf"]]},
        })
        assert satisfies(c, [0.5], 1.0)
        assert not satisfies(c, [0.5], 2.7)

    def test_unknown_rule_kind(self):
        with pytest.raises(ConstraintError):
            constraint_from_dict({
                "polarity": "positive",
                "region": {"kind": "box", "lower": [0.0], "upper": [1.0]},
                "rule": {"kind": "mystery"},
            })

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.toml"
        path.write_text("answer = 42\n")
        with pytest.raises(ConstraintError):
            load_constraints(path)
