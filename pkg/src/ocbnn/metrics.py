"""Constraint-satisfaction and task metrics over posterior ensembles.

Point predictions follow the convention used throughout: argmax class for
classification (ties resolved toward the lower class index) and the
ensemble mean of per-sample means for regression.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import kernels
from .constraints import Constraint, ConstraintSample, IntervalUnion, ValueSet, sample_region, satisfies
from .inference import PosteriorSamples
from .network import NetworkArch, predictive_probs

METRICS_SCHEMA_VERSION = 1


class MetricError(ValueError):
    pass


@dataclass
class MetricReport:
    name: str
    value: float
    split: str = ""
    constraint: str = ""
    n: int = 0
    extras: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"name": self.name, "value": float(self.value)}
        if self.split:
            out["split"] = self.split
        if self.constraint:
            out["constraint"] = self.constraint
        if self.n:
            out["n"] = int(self.n)
        out.update({k: _jsonable(v) for k, v in self.extras.items()})
        return out


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def _ensemble_raw(samples: PosteriorSamples, arch: NetworkArch, x: np.ndarray) -> list[np.ndarray]:
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    return [kernels.forward_batch(np.ascontiguousarray(w), arch.sizes, x)
            for w in samples.samples]


def point_predictions(samples: PosteriorSamples, arch: NetworkArch, x: np.ndarray) -> np.ndarray:
    """Ensemble point prediction per query row: argmax class or mean output."""
    outs = _ensemble_raw(samples, arch, x)
    if arch.task == "regression":
        return np.mean([o[:, 0] for o in outs], axis=0)
    probs = np.mean([predictive_probs(arch, o) for o in outs], axis=0)
    return np.argmax(probs, axis=1)


def violation_fraction(
    samples: PosteriorSamples,
    arch: NetworkArch,
    constraint: Constraint,
    n_points: int,
    seed: int,
) -> tuple[float, int]:
    """Fraction of region points whose point prediction breaks the constraint."""
    if not constraint.deterministic:
        raise MetricError("violation fraction needs a deterministic constraint")
    pts = sample_region(constraint.region, n_points, seed).points
    preds = point_predictions(samples, arch, pts)
    violated = sum(
        0 if satisfies(constraint, x, _as_output(arch, yhat)) else 1
        for x, yhat in zip(pts, preds)
    )
    return violated / n_points, violated


def _as_output(arch: NetworkArch, yhat):
    return int(yhat) if arch.task in ("k_class", "binary_logit") else float(yhat)


def epsilon_satisfaction(
    samples: PosteriorSamples,
    arch: NetworkArch,
    constraint: Constraint,
    x: np.ndarray,
) -> float:
    """Predictive probability mass obeying the constraint at one input."""
    if not constraint.deterministic:
        raise MetricError("epsilon satisfaction needs a deterministic constraint")
    outs = _ensemble_raw(samples, arch, x)
    if arch.task in ("k_class", "binary_logit"):
        if not isinstance(constraint.rule, ValueSet):
            raise MetricError("classification satisfaction needs a class-set rule")
        probs = np.mean([predictive_probs(arch, o) for o in outs], axis=0)[0]
        allowed = [int(v) for v in constraint.rule.values]
        mass = float(np.sum(probs[allowed]))
        return 1.0 - mass if constraint.polarity == "negative" else mass
    means = np.array([o[0, 0] for o in outs])
    if isinstance(constraint.rule, IntervalUnion):
        intervals = constraint.rule.intervals_at(np.asarray(x, dtype=np.float64).ravel())
        mass = float(np.mean([_gauss_union_mass(m, arch.noise_sd, intervals) for m in means]))
        return 1.0 - mass if constraint.polarity == "negative" else mass
    # inequality rules: indicator fraction of per-sample means (noise ignored)
    xv = np.asarray(x, dtype=np.float64).ravel()
    inside = np.array([constraint.rule.member(xv, float(m)) for m in means])
    frac = float(np.mean(inside))
    return 1.0 - frac if constraint.polarity == "negative" else frac


def _gauss_union_mass(mean: float, sd: float, intervals) -> float:
    if sd <= 0:
        return float(any(lo <= mean <= hi for lo, hi in intervals))
    total = 0.0
    for lo, hi in intervals:
        hi_cdf = 1.0 if np.isinf(hi) and hi > 0 else float(ndtr((hi - mean) / sd))
        lo_cdf = 0.0 if np.isinf(lo) and lo < 0 else float(ndtr((lo - mean) / sd))
        total += hi_cdf - lo_cdf
    return total


def classification_metrics(predictions: np.ndarray, targets: np.ndarray) -> dict:
    """Binary accuracy and F1 (F1 is 0 when the denominator vanishes)."""
    predictions = np.asarray(predictions).astype(int)
    targets = np.asarray(targets).astype(int)
    if predictions.shape != targets.shape:
        raise MetricError("predictions and targets disagree on length")
    tp = int(np.sum((predictions == 1) & (targets == 1)))
    fp = int(np.sum((predictions == 1) & (targets == 0)))
    fn = int(np.sum((predictions == 0) & (targets == 1)))
    accuracy = float(np.mean(predictions == targets))
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    return {"accuracy": accuracy, "f1": float(f1)}


def group_positive_fraction(predictions: np.ndarray, group: np.ndarray) -> dict:
    """Positive-prediction rate per protected-group value, plus the gap."""
    predictions = np.asarray(predictions).astype(int)
    group = np.asarray(group).astype(int)
    for g in (0, 1):
        if not np.any(group == g):
            raise MetricError(f"group {g} is empty")
    frac1 = float(np.mean(predictions[group == 1]))
    frac0 = float(np.mean(predictions[group == 0]))
    return {"fraction_group1": frac1, "fraction_group0": frac0,
            "gap": abs(frac1 - frac0)}


def effort_of_recourse(predictions: np.ndarray, feature: np.ndarray,
                       subset: np.ndarray) -> float:
    """Mean feature difference between predicted outcomes on a subset."""
    predictions = np.asarray(predictions).astype(int)
    feature = np.asarray(feature, dtype=np.float64)
    subset = np.asarray(subset, dtype=bool)
    pos = feature[subset & (predictions == 1)]
    neg = feature[subset & (predictions == 0)]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("one predicted outcome is empty on the subset")
    return float(pos.mean() - neg.mean())


def rejection_sample(
    samples: PosteriorSamples,
    arch: NetworkArch,
    constraint: Constraint,
    check_points: ConstraintSample,
) -> tuple[PosteriorSamples | None, float]:
    """Keep only ensemble members satisfying the constraint at every check point.

    Returns ``(accepted, rejected_fraction)``; ``accepted`` is None when
    every member is rejected (rate 1.0 is a valid outcome, not an error).
    """
    if not constraint.deterministic:
        raise MetricError("rejection sampling needs a deterministic constraint")
    pts = np.ascontiguousarray(check_points.points)
    keep = []
    for w in samples.samples:
        raw = kernels.forward_batch(np.ascontiguousarray(w), arch.sizes, pts)
        if arch.task == "regression":
            preds = raw[:, 0]
        else:
            preds = np.argmax(predictive_probs(arch, raw), axis=1)
        ok = all(
            satisfies(constraint, x, _as_output(arch, yhat))
            for x, yhat in zip(pts, preds)
        )
        keep.append(ok)
    keep = np.asarray(keep, dtype=bool)
    rate = float(1.0 - keep.mean())
    if not keep.any():
        return None, rate
    accepted = PosteriorSamples(
        samples=samples.samples[keep],
        method=samples.method,
        diagnostics={**samples.diagnostics, "rejection_rate": rate,
                     "n_check_points": len(check_points)},
    )
    return accepted, rate
