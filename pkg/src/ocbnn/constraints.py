"""Output constraints: input regions, output rules, and region sampling.

A deterministic constraint pairs an input region with an output rule and a
polarity: positive means the rule describes the *allowed* outputs, negative
means it describes the *forbidden* ones. A probabilistic constraint instead
carries a target distribution over outputs for every input in the region.

Region sampling draws the finite set of anchor points that sampling-based
priors are evaluated on; the draw happens once, at the start of inference,
and is then frozen.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .expressions import Expression

try:  # python < 3.11
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


class ConstraintError(ValueError):
    """Malformed constraint specification or contract violation."""


class SamplingInfeasibleError(RuntimeError):
    """Rejection sampling of a predicate region is not making progress."""


REJECTION_BATCH = 8192
REJECTION_MIN_PROPOSALS = 1_000_000
REJECTION_MIN_RATE = 1e-4

#: Named input-region indicators usable from constraint files. Each maps a
#: point (or batch of points) to a boolean (array).
PREDICATES: dict[str, Callable] = {
    "same_sign_2d": lambda x: np.asarray(x)[..., 0] * np.asarray(x)[..., 1] >= 0,
}


def _halfline_matching_sign(x: np.ndarray) -> list[tuple[float, float]]:
    if np.asarray(x)[..., 0] >= 0:
        return [(0.0, np.inf)]
    return [(-np.inf, 0.0)]


#: Named per-input interval rules usable from constraint files.
INTERVAL_RULES: dict[str, Callable] = {
    "halfline_matching_input_sign": _halfline_matching_sign,
}


@dataclass(frozen=True)
class InputRegion:
    """Input region: axis-aligned box, indicator predicate, or all of X.

    ``lower``/``upper`` give the box for kind "box" and the sampling box for
    the other kinds. A predicate region requires a sampling box with nonzero
    volume; an all-of-X region without a box falls back to a Gaussian walk
    with step ``walk_step`` from ``walk_origin``.
    """

    kind: str  # "box" | "predicate" | "all"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    predicate: Callable | None = None
    predicate_name: str = ""
    walk_step: float = 1.0
    walk_origin: np.ndarray | None = None
    dim: int = 0

    def __post_init__(self):
        if self.kind not in ("box", "predicate", "all"):
            raise ConstraintError(f"unknown region kind {self.kind!r}")
        lower, upper = self.lower, self.upper
        if lower is not None:
            lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
            upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
            if lower.shape != upper.shape:
                raise ConstraintError("box bounds disagree on dimension")
            if np.any(lower > upper):
                raise ConstraintError("box lower bound exceeds upper bound")
            object.__setattr__(self, "lower", lower)
            object.__setattr__(self, "upper", upper)
            object.__setattr__(self, "dim", lower.shape[0])
        if self.kind == "box" and lower is None:
            raise ConstraintError("box region needs lower and upper bounds")
        if self.kind == "predicate":
            if self.predicate is None:
                raise ConstraintError("predicate region needs an indicator")
            if lower is None:
                raise ConstraintError("predicate region needs a sampling box")
            if not np.all(upper > lower):
                raise ConstraintError("predicate sampling box must have nonzero volume")
        if self.kind == "all" and lower is None and self.dim <= 0:
            raise ConstraintError("all-of-X region without a box needs an explicit dim")

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "box":
            return bool(np.all(x >= self.lower) and np.all(x <= self.upper))
        if self.kind == "predicate":
            return bool(self.predicate(x))
        return True

    def contains_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.kind == "box":
            return np.all((x >= self.lower) & (x <= self.upper), axis=1)
        if self.kind == "predicate":
            out = self.predicate(x)
            out = np.asarray(out, dtype=bool)
            if out.shape != (x.shape[0],):  # indicator written for single points
                out = np.array([bool(self.predicate(row)) for row in x])
            return out
        return np.ones(x.shape[0], dtype=bool)


@dataclass(frozen=True)
class ConstraintSample:
    """Frozen batch of anchor points drawn from a region."""

    points: np.ndarray  # (T, Q)
    seed: int
    drawn_at: str = "inference_start"

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if pts.shape[0] < 1:
            raise ConstraintError("a constraint sample needs at least one point")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def sample_region(region: InputRegion, n_points: int, seed: int) -> ConstraintSample:
    """Draw ``n_points`` i.i.d. points from the region, reproducibly.

    Boxes are sampled uniformly; predicate regions by rejection from their
    sampling box; all-of-X regions uniformly from the sampling box, or by a
    Gaussian walk when no box was supplied.
    """
    if n_points < 1:
        raise ConstraintError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    if region.kind in ("box", "all") and region.lower is not None:
        pts = rng.uniform(region.lower, region.upper, size=(n_points, region.dim))
        return ConstraintSample(points=pts, seed=seed)
    if region.kind == "all":
        steps = rng.normal(0.0, region.walk_step, size=(n_points, region.dim))
        origin = region.walk_origin if region.walk_origin is not None else np.zeros(region.dim)
        pts = origin + np.cumsum(steps, axis=0)
        return ConstraintSample(points=pts, seed=seed)

    # predicate: rejection sample inside the bounding box
    accepted: list[np.ndarray] = []
    n_accepted = 0
    n_proposed = 0
    while n_accepted < n_points:
        batch = rng.uniform(region.lower, region.upper, size=(REJECTION_BATCH, region.dim))
        keep = region.contains_batch(batch)
        n_proposed += REJECTION_BATCH
        if keep.any():
            accepted.append(batch[keep])
            n_accepted += int(keep.sum())
        if n_proposed >= REJECTION_MIN_PROPOSALS and n_accepted / n_proposed < REJECTION_MIN_RATE:
            raise SamplingInfeasibleError(
                f"predicate acceptance rate {n_accepted / n_proposed:.2e} after "
                f"{n_proposed} proposals; supply a tighter sampling box"
            )
    pts = np.concatenate(accepted, axis=0)[:n_points]
    return ConstraintSample(points=pts, seed=seed)


def grid_region(region: InputRegion, n_points: int) -> ConstraintSample:
    """Evenly spaced anchor points over a 1-D box, endpoints included.

    Deterministic alternative to ``sample_region`` for box regions where
    edge coverage matters (a sparse i.i.d. draw can leave the region's
    boundary unguarded).
    """
    if region.lower is None or region.kind == "predicate":
        raise ConstraintError("grid placement needs a box region")
    if region.dim != 1:
        raise ConstraintError("grid placement is defined for 1-D regions")
    if n_points == 1:
        pts = np.array([[0.5 * (region.lower[0] + region.upper[0])]])
    else:
        pts = np.linspace(region.lower[0], region.upper[0], n_points).reshape(-1, 1)
    return ConstraintSample(points=pts, seed=-1)


# ---------------------------------------------------------------------------
# Output rules


@dataclass(frozen=True)
class ValueSet:
    """Finite set of permitted values: class indices or real numbers."""

    values: tuple
    tol: float = 1e-9

    def __post_init__(self):
        if not self.values:
            raise ConstraintError("value set cannot be empty")
        object.__setattr__(self, "values", tuple(self.values))

    def member(self, x, y) -> bool:
        if isinstance(y, (int, np.integer)):
            return any(int(v) == int(y) for v in self.values)
        return any(abs(float(v) - float(y)) <= self.tol for v in self.values)


@dataclass(frozen=True)
class IntervalUnion:
    """Union of disjoint closed intervals, possibly varying with the input.

    ``intervals`` holds static bounds (floats or input expressions);
    ``rule_fn`` computes the interval list per input (for rules that cannot
    be written as fixed bounds). Exactly one of the two must be given.
    """

    intervals: tuple | None = None
    rule_fn: Callable | None = None
    rule_name: str = ""

    def __post_init__(self):
        if (self.intervals is None) == (self.rule_fn is None):
            raise ConstraintError("interval rule needs either static intervals or a rule function")
        if self.intervals is not None:
            ivs = tuple((lo, hi) for lo, hi in self.intervals)
            if not ivs:
                raise ConstraintError("interval union cannot be empty")
            static = [iv for iv in ivs if not isinstance(iv[0], Expression)
                      and not isinstance(iv[1], Expression)]
            for lo, hi in static:
                if float(lo) > float(hi):
                    raise ConstraintError(f"interval [{lo}, {hi}] is inverted")
            bounds = sorted((float(lo), float(hi)) for lo, hi in static)
            for (_, prev_hi), (lo, _) in zip(bounds, bounds[1:]):
                if lo < prev_hi:
                    raise ConstraintError("intervals must be disjoint and ordered")
            object.__setattr__(self, "intervals", ivs)

    def intervals_at(self, x) -> list[tuple[float, float]]:
        if self.rule_fn is not None:
            return [(float(lo), float(hi)) for lo, hi in self.rule_fn(x)]
        out = []
        for lo, hi in self.intervals:
            lo_v = float(lo(x)) if isinstance(lo, Expression) else float(lo)
            hi_v = float(hi(x)) if isinstance(hi, Expression) else float(hi)
            out.append((lo_v, hi_v))
        return out

    def member(self, x, y) -> bool:
        return any(lo <= y <= hi for lo, hi in self.intervals_at(x))


@dataclass(frozen=True)
class InequalityList:
    """Membership via inequalities: y belongs iff every g_i(x, y) <= 0."""

    exprs: tuple[Expression, ...]

    def __post_init__(self):
        if not self.exprs:
            raise ConstraintError("inequality rule needs at least one expression")
        object.__setattr__(self, "exprs", tuple(self.exprs))

    def values(self, x, y) -> np.ndarray:
        return np.array([e(x, y) for e in self.exprs], dtype=np.float64)

    def member(self, x, y) -> bool:
        vals = self.values(x, y)
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero(~np.isfinite(vals))[0])
            raise ConstraintError(f"inequality {bad} is non-finite at the query point")
        return bool(np.all(vals <= 0.0))


OutputRule = ValueSet | IntervalUnion | InequalityList


# ---------------------------------------------------------------------------
# Target distributions for probabilistic constraints


@dataclass(frozen=True)
class GaussianDist:
    mean: float | Expression
    sd: float

    def mean_at(self, x) -> np.ndarray:
        if isinstance(self.mean, Expression):
            return np.asarray(self.mean(x), dtype=np.float64)
        return np.full(np.atleast_2d(x).shape[0], float(self.mean))


@dataclass(frozen=True)
class BernoulliDist:
    p: float | Expression

    def p_at(self, x) -> np.ndarray:
        if isinstance(self.p, Expression):
            vals = np.asarray(self.p(x), dtype=np.float64)
        else:
            vals = np.full(np.atleast_2d(x).shape[0], float(self.p))
        return np.clip(vals, 1e-6, 1.0 - 1e-6)


@dataclass(frozen=True)
class CategoricalDist:
    probs: tuple

    def probs_at(self, x) -> np.ndarray:
        n = np.atleast_2d(x).shape[0]
        cols = []
        for p in self.probs:
            if isinstance(p, Expression):
                cols.append(np.broadcast_to(np.asarray(p(x), dtype=np.float64), (n,)))
            else:
                cols.append(np.full(n, float(p)))
        mat = np.clip(np.stack(cols, axis=1), 1e-12, None)
        return mat / mat.sum(axis=1, keepdims=True)


OutputDist = GaussianDist | BernoulliDist | CategoricalDist


@dataclass(frozen=True)
class Constraint:
    region: InputRegion
    polarity: str  # "positive" | "negative" | "probabilistic"
    rule: OutputRule | None = None
    dist: OutputDist | None = None
    name: str = ""

    def __post_init__(self):
        if self.polarity not in ("positive", "negative", "probabilistic"):
            raise ConstraintError(f"unknown polarity {self.polarity!r}")
        if self.polarity == "probabilistic":
            if self.dist is None or self.rule is not None:
                raise ConstraintError("probabilistic constraints carry a distribution, not a rule")
        else:
            if self.rule is None or self.dist is not None:
                raise ConstraintError("deterministic constraints carry a rule, not a distribution")

    @property
    def deterministic(self) -> bool:
        return self.polarity in ("positive", "negative")


def flip_polarity(c: Constraint) -> Constraint:
    if not c.deterministic:
        raise ConstraintError("cannot flip a probabilistic constraint")
    other = "negative" if c.polarity == "positive" else "positive"
    return Constraint(region=c.region, polarity=other, rule=c.rule, dist=None, name=c.name)


def satisfies(c: Constraint, x, y) -> bool:
    """Whether output ``y`` satisfies the deterministic constraint at ``x``.

    The caller is responsible for ``x`` lying inside the region. Positive
    polarity requires membership in the rule set, negative requires
    non-membership.
    """
    if not c.deterministic:
        raise ConstraintError("satisfies() is defined for deterministic constraints only")
    member = c.rule.member(x, y)
    return member if c.polarity == "positive" else not member


# ---------------------------------------------------------------------------
# TOML constraint files


def _maybe_expr(value) -> float | Expression:
    if isinstance(value, str):
        expr = Expression(value)
        if not expr.uses_y() and "x_" not in value:
            return float(expr())
        return expr
    return float(value)


def _region_from_dict(spec: dict) -> InputRegion:
    kind = spec.get("kind", "box")
    lower = spec.get("lower")
    upper = spec.get("upper")
    predicate = None
    pred_name = spec.get("predicate", "")
    if pred_name:
        if pred_name not in PREDICATES:
            raise ConstraintError(f"unknown predicate {pred_name!r}")
        predicate = PREDICATES[pred_name]
        kind = "predicate"
    return InputRegion(
        kind=kind,
        lower=None if lower is None else np.asarray(lower, dtype=np.float64),
        upper=None if upper is None else np.asarray(upper, dtype=np.float64),
        predicate=predicate,
        predicate_name=pred_name,
        walk_step=float(spec.get("walk_step", 1.0)),
        dim=int(spec.get("dim", 0)),
    )


def _rule_from_dict(spec: dict) -> OutputRule:
    kind = spec.get("kind")
    if kind == "classes":
        return ValueSet(values=tuple(int(v) for v in spec["classes"]))
    if kind == "values":
        return ValueSet(values=tuple(float(v) for v in spec["values"]),
                        tol=float(spec.get("tol", 1e-9)))
    if kind == "intervals":
        ivs = tuple((_maybe_expr(lo), _maybe_expr(hi)) for lo, hi in spec["intervals"])
        return IntervalUnion(intervals=ivs)
    if kind == "named":
        name = spec["name"]
        if name not in INTERVAL_RULES:
            raise ConstraintError(f"unknown rule {name!r}")
        return IntervalUnion(rule_fn=INTERVAL_RULES[name], rule_name=name)
    if kind == "inequalities":
        return InequalityList(exprs=tuple(Expression(e) for e in spec["exprs"]))
    raise ConstraintError(f"unknown rule kind {kind!r}")


def _dist_from_dict(spec: dict) -> OutputDist:
    family = spec.get("family")
    if family == "gaussian":
        return GaussianDist(mean=_maybe_expr(spec["mean"]), sd=float(spec["sd"]))
    if family == "bernoulli":
        return BernoulliDist(p=_maybe_expr(spec["p"]))
    if family == "categorical":
        return CategoricalDist(probs=tuple(_maybe_expr(p) for p in spec["probs"]))
    raise ConstraintError(f"unknown distribution family {family!r}")


def constraint_from_dict(spec: dict) -> Constraint:
    polarity = spec.get("polarity", "positive")
    rule = _rule_from_dict(spec["rule"]) if "rule" in spec else None
    dist = _dist_from_dict(spec["dist"]) if "dist" in spec else None
    return Constraint(
        region=_region_from_dict(spec.get("region", {"kind": "all", "dim": spec.get("dim", 0)})),
        polarity=polarity,
        rule=rule,
        dist=dist,
        name=str(spec.get("name", "")),
    )


def load_constraints(path) -> list[Constraint]:
    """Read a TOML constraint file: a list of ``[[constraints]]`` tables."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    specs = doc.get("constraints")
    if not specs:
        raise ConstraintError(f"{path}: no [[constraints]] tables found")
    return [constraint_from_dict(s) for s in specs]
