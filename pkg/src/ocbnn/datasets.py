"""Data handling: toy generators, schema-driven CSV ingestion, preprocessing,
and synthetic surrogates for the three tabular case studies.

The surrogates emit CSV files with the same column schemas as the original
case-study datasets (clinical interventions, recidivism risk scores, credit
distress), with label rules chosen to exhibit the same qualitative biases:
the recidivism labels depend on race beyond criminal history, the credit
data under-represents young adults whose utilization/distress link is
weaker, and the clinical constraint regions carry no training signal. The
CSV loader and preprocessing pipeline treat surrogate and real files
identically.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .network import Dataset

try:  # python < 3.11
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

SD_FLOOR = 1e-8


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    transform: str = "none"  # "standardize" | "log_transform" | "none"
    role: str = "feature"    # "feature" | "target" | "group"
    as_feature: bool = True  # for group columns: also feed to the model?

    def __post_init__(self):
        if self.transform not in ("standardize", "log_transform", "none"):
            raise SchemaError(f"unknown transform {self.transform!r}")
        if self.role not in ("feature", "target", "group"):
            raise SchemaError(f"unknown role {self.role!r}")


def validate_schema(schema: list[FeatureSpec]) -> None:
    targets = [s for s in schema if s.role == "target"]
    if len(targets) != 1:
        raise SchemaError(f"schema needs exactly one target, found {len(targets)}")
    names = [s.name for s in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate column names in schema")


def model_feature_names(schema: list[FeatureSpec]) -> list[str]:
    return [s.name for s in schema
            if s.role == "feature" or (s.role == "group" and s.as_feature)]


def load_schema_toml(path) -> list[FeatureSpec]:
    """Read a schema file: a list of ``[[features]]`` tables."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    specs = doc.get("features")
    if not specs:
        raise SchemaError(f"{path}: no [[features]] tables found")
    schema = [FeatureSpec(name=s["name"], transform=s.get("transform", "none"),
                          role=s.get("role", "feature"),
                          as_feature=bool(s.get("as_feature", True)))
              for s in specs]
    validate_schema(schema)
    return schema


# ---------------------------------------------------------------------------
# Toy generators

TOY_KINDS = ("band_regression", "three_blobs", "sign_aligned", "gap_clusters",
             "biased_hiring", "noisy_cosine")


def gen_toy(kind: str, n: int, seed: int, noise_sd: float | None = None) -> Dataset:
    """Deterministic toy dataset for the low-dimensional simulations.

    Defaults (all overridable only through ``noise_sd`` where noted):
      * band_regression: two clusters at |x| in [0.8, 2], y = 1.2 + 0.35 x^2
        plus noise (default sd 0.1); the band x in [-0.3, 0.3] stays empty.
      * three_blobs: three 2-D Gaussian blobs, none inside (1,3)x(-2,0).
      * sign_aligned: points with x*y >= 0, y = 0.9 x plus noise (sd 0.1).
      * gap_clusters: left cluster near y=3.3, right cluster near y=0.2, so any
        fit must cross the band y in [1, 2.5] somewhere in between.
      * biased_hiring: x1 ~ Bernoulli(1/2), x2 ~ U(0,1); label 1 iff
        (x1 = 1 and x2 >= 0.8) or (x1 = 0 and x2 >= 0.2); noiseless.
      * noisy_cosine: y = 5 cos(x / 1.7) plus noise (default sd 1) at n
        uniform x in [-6, 6].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "band_regression":
        sd = 0.1 if noise_sd is None else noise_sd
        xs = rng.uniform(0.8, 2.0, size=n) * rng.choice([-1.0, 1.0], size=n)
        ys = 1.2 + 0.35 * xs ** 2 + rng.normal(0.0, sd, size=n)
        return Dataset(xs.reshape(-1, 1), ys)
    if kind == "three_blobs":
        centers = np.array([[-2.0, -1.0], [0.0, 2.5], [3.0, 2.5]])
        labels = rng.integers(0, 3, size=n)
        pts = centers[labels] + rng.normal(0.0, 0.55, size=(n, 2))
        return Dataset(pts, labels.astype(np.int64))
    if kind == "sign_aligned":
        sd = 0.1 if noise_sd is None else noise_sd
        xs = rng.uniform(0.5, 2.0, size=n) * rng.choice([-1.0, 1.0], size=n)
        ys = 0.9 * xs + rng.normal(0.0, sd, size=n)
        return Dataset(xs.reshape(-1, 1), ys)
    if kind == "gap_clusters":
        # both clusters sit at the height of the forbidden band's center, so
        # fits can arc above or below it across the constrained window
        sd = 0.1 if noise_sd is None else noise_sd
        n_left = n // 2
        xl = rng.uniform(-2.4, -1.6, size=n_left)
        xr = rng.uniform(1.6, 2.4, size=n - n_left)
        xs = np.concatenate([xl, xr])
        ys = 1.75 + rng.normal(0.0, sd, size=n)
        return Dataset(xs.reshape(-1, 1), ys)
    if kind == "biased_hiring":
        x1 = rng.integers(0, 2, size=n).astype(np.float64)
        x2 = rng.uniform(0.0, 1.0, size=n)
        labels = np.where(x1 > 0.5, x2 >= 0.8, x2 >= 0.2).astype(np.int64)
        return Dataset(np.stack([x1, x2], axis=1), labels)
    if kind == "noisy_cosine":
        sd = 1.0 if noise_sd is None else noise_sd
        xs = np.sort(rng.uniform(-6.0, 6.0, size=n))
        ys = 5.0 * np.cos(xs / 1.7) + rng.normal(0.0, sd, size=n)
        return Dataset(xs.reshape(-1, 1), ys)
    raise ValueError(f"unknown toy kind {kind!r}; expected one of {TOY_KINDS}")


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass
class RawTable:
    """Parsed CSV columns (schema order) with the dropped-row count."""

    columns: dict[str, np.ndarray]
    n_dropped: int

    def __len__(self) -> int:
        first = next(iter(self.columns.values()))
        return len(first)


def load_csv(path, schema: list[FeatureSpec]) -> RawTable:
    """Read a header-first CSV, keeping the schema's columns as floats.

    Rows with any unparseable cell in a schema column are dropped and
    counted. A schema column missing from the header raises ``SchemaError``
    naming it.
    """
    validate_schema(schema)
    names = [s.name for s in schema]
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        col_idx = {}
        for name in names:
            if name not in header:
                raise SchemaError(f"{path}: missing column {name!r}")
            col_idx[name] = header.index(name)
        data: dict[str, list[float]] = {name: [] for name in names}
        n_dropped = 0
        for row in reader:
            if not row:
                continue
            try:
                values = [float(row[col_idx[name]]) for name in names]
            except (ValueError, IndexError):
                n_dropped += 1
                continue
            for name, v in zip(names, values):
                data[name].append(v)
    return RawTable(
        columns={name: np.asarray(vals, dtype=np.float64) for name, vals in data.items()},
        n_dropped=n_dropped,
    )


def raw_table_from_dataset(data: Dataset, schema: list[FeatureSpec]) -> RawTable:
    """View an in-memory dataset through a schema (features then target)."""
    validate_schema(schema)
    feat_specs = [s for s in schema if s.role != "target"]
    target = next(s for s in schema if s.role == "target")
    cols = {s.name: data.inputs[:, i].copy() for i, s in enumerate(feat_specs)}
    cols[target.name] = np.asarray(data.targets, dtype=np.float64)
    return RawTable(columns=cols, n_dropped=0)


# ---------------------------------------------------------------------------
# Preprocessing


@dataclass
class SplitDataset:
    """Train/test datasets with the fitted preprocessing record.

    Transforms are fitted on the training split only; raw (untransformed)
    columns are retained per split, row-aligned with the model matrices, for
    group/effort metrics and raw-unit constraint bounds.
    """

    train: Dataset
    test: Dataset
    feature_names: list[str]
    record: list[dict]
    seed: int
    raw_train: dict[str, np.ndarray] = field(default_factory=dict)
    raw_test: dict[str, np.ndarray] = field(default_factory=dict)

    def transform_bound(self, feature: str, value: float) -> float:
        """Map a raw-unit bound into model space for the named feature."""
        entry = next((r for r in self.record if r["name"] == feature), None)
        if entry is None:
            raise SchemaError(f"{feature!r} is not a model feature")
        return transform_value(entry, value)

    def feature_index(self, feature: str) -> int:
        try:
            return self.feature_names.index(feature)
        except ValueError:
            raise SchemaError(f"{feature!r} is not a model feature") from None

    def drop_train_rows(self, mask: np.ndarray) -> "SplitDataset":
        """New split with the masked training rows removed."""
        keep = ~np.asarray(mask, dtype=bool)
        return SplitDataset(
            train=Dataset(self.train.inputs[keep], self.train.targets[keep]),
            test=self.test,
            feature_names=self.feature_names,
            record=self.record,
            seed=self.seed,
            raw_train={k: v[keep] for k, v in self.raw_train.items()},
            raw_test=self.raw_test,
        )


def transform_value(entry: dict, value: float) -> float:
    if entry["transform"] == "standardize":
        return (value - entry["mean"]) / entry["sd"]
    if entry["transform"] == "log_transform":
        return float(np.log1p(value)) if np.isfinite(value) else value
    return value


def _apply_transform(entry: dict, col: np.ndarray) -> np.ndarray:
    if entry["transform"] == "standardize":
        return (col - entry["mean"]) / entry["sd"]
    if entry["transform"] == "log_transform":
        return np.log1p(col)
    return col


def preprocess(
    table: RawTable,
    schema: list[FeatureSpec],
    *,
    split_fraction: float = 0.8,
    upsample_minority: bool = False,
    seed: int = 0,
    classification: bool = True,
) -> SplitDataset:
    """Split, fit per-feature transforms on train, and optionally rebalance.

    Standardization uses train mean/sd (sd floored at 1e-8 with a warning
    for constant columns); log transforms are log(1+x). Minority upsampling
    duplicates training rows of the rarer class to parity.
    """
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split_fraction must lie in (0, 1)")
    validate_schema(schema)
    rng = np.random.default_rng(seed)
    n = len(table)
    perm = rng.permutation(n)
    n_train = int(round(split_fraction * n))
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    feat_names = model_feature_names(schema)
    target_name = next(s.name for s in schema if s.role == "target")
    specs = {s.name: s for s in schema}

    record = []
    for name in feat_names:
        entry = {"name": name, "transform": specs[name].transform}
        if specs[name].transform == "standardize":
            col = table.columns[name][train_idx]
            sd = float(col.std())
            if sd < SD_FLOOR:
                warnings.warn(f"feature {name!r} has (near-)zero variance; flooring sd")
                sd = SD_FLOOR
            entry["mean"] = float(col.mean())
            entry["sd"] = sd
        record.append(entry)

    def build(idx):
        mat = np.stack(
            [_apply_transform(entry, table.columns[entry["name"]][idx]) for entry in record],
            axis=1,
        ) if len(idx) else np.zeros((0, len(feat_names)))
        target = table.columns[target_name][idx]
        if classification:
            target = target.astype(np.int64)
        raw = {name: table.columns[name][idx].copy() for name in table.columns}
        return mat, target, raw

    train_mat, train_y, raw_train = build(train_idx)
    test_mat, test_y, raw_test = build(test_idx)

    if upsample_minority and classification and len(train_y):
        classes, counts = np.unique(train_y, return_counts=True)
        if len(classes) == 2 and counts[0] != counts[1]:
            minority = classes[np.argmin(counts)]
            need = int(counts.max() - counts.min())
            pool = np.flatnonzero(train_y == minority)
            extra = np.concatenate([
                np.tile(pool, need // len(pool)),
                rng.choice(pool, size=need % len(pool), replace=False),
            ]).astype(np.int64)
            train_mat = np.concatenate([train_mat, train_mat[extra]])
            train_y = np.concatenate([train_y, train_y[extra]])
            raw_train = {k: np.concatenate([v, v[extra]]) for k, v in raw_train.items()}

    return SplitDataset(
        train=Dataset(train_mat, train_y),
        test=Dataset(test_mat, test_y),
        feature_names=feat_names,
        record=record,
        seed=seed,
        raw_train=raw_train,
        raw_test=raw_test,
    )


# ---------------------------------------------------------------------------
# Processed-split cache


def save_split(path, split: SplitDataset) -> None:
    """Persist a preprocessed split (matrices, record, raw columns)."""
    payload = {
        "train_inputs": split.train.inputs,
        "train_targets": split.train.targets,
        "test_inputs": split.test.inputs,
        "test_targets": split.test.targets,
        "meta": np.frombuffer(json.dumps({
            "feature_names": split.feature_names,
            "record": split.record,
            "seed": split.seed,
            "raw_keys": sorted(split.raw_train.keys()),
        }).encode(), dtype=np.uint8),
    }
    for key, col in split.raw_train.items():
        payload[f"raw_train__{key}"] = col
    for key, col in split.raw_test.items():
        payload[f"raw_test__{key}"] = col
    np.savez(path, **payload)


def load_split(path) -> SplitDataset:
    with np.load(path) as doc:
        meta = json.loads(doc["meta"].tobytes().decode())
        raw_train = {k: doc[f"raw_train__{k}"] for k in meta["raw_keys"]
                     if f"raw_train__{k}" in doc}
        raw_test = {k: doc[f"raw_test__{k}"] for k in meta["raw_keys"]
                    if f"raw_test__{k}" in doc}
        return SplitDataset(
            train=Dataset(doc["train_inputs"], doc["train_targets"]),
            test=Dataset(doc["test_inputs"], doc["test_targets"]),
            feature_names=list(meta["feature_names"]),
            record=meta["record"],
            seed=int(meta["seed"]),
            raw_train=raw_train,
            raw_test=raw_test,
        )


# ---------------------------------------------------------------------------
# Surrogate tabular datasets (schema-identical stand-ins for the case studies)


def builtin_schema(name: str, include_group_feature: bool = True) -> list[FeatureSpec]:
    if name == "clinical":
        return [
            FeatureSpec("MAP", "standardize"),
            FeatureSpec("age", "standardize"),
            FeatureSpec("urine", "log_transform"),
            FeatureSpec("weight", "standardize"),
            FeatureSpec("creatinine", "log_transform"),
            FeatureSpec("lactate", "log_transform"),
            FeatureSpec("bicarbonate", "standardize"),
            FeatureSpec("BUN", "log_transform"),
            FeatureSpec("action", role="target"),
        ]
    if name == "compas":
        return [
            FeatureSpec("age", "standardize"),
            FeatureSpec("two_year_recid"),
            FeatureSpec("priors_count", "standardize"),
            FeatureSpec("length_of_stay", "standardize"),
            FeatureSpec("c_charge_degree_F"),
            FeatureSpec("c_charge_degree_M"),
            FeatureSpec("sex_Female"),
            FeatureSpec("sex_Male"),
            FeatureSpec("race", role="group", as_feature=include_group_feature),
            FeatureSpec("compas_high_risk", role="target"),
        ]
    if name == "credit":
        return [
            FeatureSpec("RevolvingUtilizationOfUnsecuredLines"),
            FeatureSpec("age", "standardize"),
            FeatureSpec("DebtRatio"),
            FeatureSpec("MonthlyIncome", "standardize"),
            FeatureSpec("NumberOfOpenCreditLinesAndLoans", "standardize"),
            FeatureSpec("NumberRealEstateLoansOrLines"),
            FeatureSpec("NumberOfTime30-59DaysPastDueNotWorse"),
            FeatureSpec("NumberOfTime60-89DaysPastDueNotWorse"),
            FeatureSpec("NumberOfTimes90DaysLate"),
            FeatureSpec("NumberOfDependents"),
            FeatureSpec("SeriousDlqin2yrs", role="target"),
        ]
    raise SchemaError(f"unknown builtin schema {name!r}")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def surrogate_clinical(n: int, seed: int) -> tuple[list[str], np.ndarray]:
    """Vitals-style binary intervention data (8 features + action).

    The label depends on blood pressure, lactate, and bicarbonate; the
    kidney-function features carry no label signal, so regions defined on
    them are out-of-distribution knowledge.
    """
    rng = np.random.default_rng(seed)
    map_ = rng.normal(78.0, 12.0, n)
    age = np.clip(rng.normal(65.0, 15.0, n), 18.0, 95.0)
    urine = rng.lognormal(np.log(120.0), 0.8, n)
    weight = np.clip(rng.normal(80.0, 18.0, n), 35.0, 200.0)
    creatinine = rng.lognormal(0.0, 0.5, n)
    lactate = rng.lognormal(np.log(1.6), 0.5, n)
    bicarbonate = rng.normal(24.0, 4.0, n)
    bun = rng.lognormal(np.log(18.0), 0.5, n)
    logit = (-1.1 - 0.055 * (map_ - 78.0) + 0.8 * (lactate > 2.5)
             + 0.5 * (bicarbonate < 21.0) - 0.004 * (weight - 80.0))
    action = (rng.uniform(size=n) < _sigmoid(logit)).astype(np.float64)
    cols = [map_, age, urine, weight, creatinine, lactate, bicarbonate, bun, action]
    header = [s.name for s in builtin_schema("clinical")]
    return header, np.stack(cols, axis=1)


def surrogate_compas(n: int, seed: int) -> tuple[list[str], np.ndarray]:
    """Recidivism-style data whose risk labels depend on race beyond history."""
    rng = np.random.default_rng(seed)
    race = (rng.uniform(size=n) < 0.51).astype(np.float64)
    age = np.clip(18.0 + rng.gamma(2.2, 6.0, n), 18.0, 75.0)
    priors = rng.poisson(1.5 + 0.35 * race).astype(np.float64)
    z_priors = (priors - priors.mean()) / max(priors.std(), 1e-6)
    recid_logit = -0.45 + 0.55 * z_priors - 0.012 * (age - 35.0)
    recid = (rng.uniform(size=n) < _sigmoid(recid_logit)).astype(np.float64)
    stay = rng.lognormal(2.0 + 0.25 * recid, 0.8, n)
    felony = (rng.uniform(size=n) < 0.64).astype(np.float64)
    male = (rng.uniform(size=n) < 0.81).astype(np.float64)
    label_logit = (-2.35 + 1.9 * recid + 1.8 * race + 0.5 * z_priors + 0.2 * felony)
    high_risk = (rng.uniform(size=n) < _sigmoid(label_logit)).astype(np.float64)
    cols = [age, recid, priors, stay, felony, 1.0 - felony, 1.0 - male, male, race, high_risk]
    header = [s.name for s in builtin_schema("compas")]
    return header, np.stack(cols, axis=1)


def surrogate_credit(n: int, seed: int) -> tuple[list[str], np.ndarray]:
    """Credit-distress data where the utilization/distress link is weaker for
    the under-represented under-35 group."""
    rng = np.random.default_rng(seed)
    age = np.clip(rng.normal(49.0, 14.5, n), 21.0, 92.0)
    young = age < 35.0
    ruul = np.where(
        young,
        1.4 * rng.beta(1.8, 2.8, n),
        1.4 * rng.beta(1.4, 4.0, n),
    )
    debt_ratio = rng.lognormal(-1.0, 0.9, n)
    income = rng.lognormal(8.6, 0.55, n)
    open_lines = rng.poisson(8.0, n).astype(np.float64)
    real_estate = rng.poisson(1.0, n).astype(np.float64)
    late3059 = rng.poisson(0.25, n).astype(np.float64)
    late6089 = rng.poisson(0.12, n).astype(np.float64)
    late90 = rng.poisson(0.20, n).astype(np.float64)
    dependents = rng.poisson(0.8, n).astype(np.float64)
    slope = np.where(young, 0.7, 1.9)
    z_income = (np.log(income) - 8.6) / 0.55
    logit = (-2.55 + slope * ruul + 0.8 * np.minimum(late90, 3.0)
             + 0.45 * np.minimum(late3059, 3.0) - 0.15 * z_income)
    distress = (rng.uniform(size=n) < _sigmoid(logit)).astype(np.float64)
    cols = [ruul, age, debt_ratio, income, open_lines, real_estate,
            late3059, late6089, late90, dependents, distress]
    header = [s.name for s in builtin_schema("credit")]
    return header, np.stack(cols, axis=1)


SURROGATES = {
    "clinical": surrogate_clinical,
    "compas": surrogate_compas,
    "credit": surrogate_credit,
}


def write_surrogate_csv(name: str, path, n: int, seed: int) -> None:
    """Generate a surrogate dataset and write it as a plain CSV."""
    if name not in SURROGATES:
        raise SchemaError(f"unknown surrogate {name!r}")
    header, mat = SURROGATES[name](n, seed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in mat:
            writer.writerow([format(v, ".10g") for v in row])
