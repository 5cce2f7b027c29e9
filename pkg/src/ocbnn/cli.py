"""Config-driven experiment runner.

``ocbnn run config.toml`` assembles data, constraints, prior, and sampler
from one declarative file and writes four artifacts into the run directory:

  * ``samples.bin``           posterior parameter ensemble
  * ``predictive.csv``        predictive summary over a query grid
  * ``metrics.json``          evaluation metrics (schema-versioned)
  * ``config_resolved.json``  canonical config snapshot (re-runnable)

Every artifact embeds the sha256 hash of the resolved config; re-running a
snapshot with the same seed reproduces the artifacts byte for byte.
``compare`` diffs one metric between two runs and ``sweep`` re-runs a config
over a list of values for one config path.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .amortized import (
    AmortizedPriorError,
    ScalarHeadAdapter,
    load_variational,
    make_amortized_prior,
    optimize_amortized_prior,
    save_variational,
)
from .constraints import (
    Constraint,
    ConstraintError,
    constraint_from_dict,
    grid_region,
    sample_region,
)
from .datasets import (
    Dataset,
    FeatureSpec,
    SchemaError,
    SplitDataset,
    builtin_schema,
    gen_toy,
    load_csv,
    load_schema_toml,
    load_split,
    preprocess,
    save_split,
    write_surrogate_csv,
    TOY_KINDS,
)
from .expressions import Expression
from .inference import (
    BnnLikelihood,
    BnnPosterior,
    InferenceError,
    PosteriorSamples,
    bbb,
    hmc,
    posterior_predictive,
    save_samples,
    svgd,
)
from .metrics import (
    MetricError,
    MetricReport,
    METRICS_SCHEMA_VERSION,
    classification_metrics,
    effort_of_recourse,
    epsilon_satisfaction,
    group_positive_fraction,
    point_predictions,
    rejection_sample,
    violation_fraction,
)
from .network import NetworkArch
from .priors import (
    SampledConstraintPrior,
    DirichletParams,
    GmmParams,
    IsotropicGaussianPrior,
    NegExpParams,
    PriorError,
    build_constraint_term,
)

try:  # python < 3.11
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

OUTPUT_ROOT_ENV = "OCBNN_OUTPUT_ROOT"
CONFIG_ERRORS = (ConstraintError, SchemaError, PriorError, AmortizedPriorError, MetricError)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config loading and resolution


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".json":
        return json.loads(path.read_text())
    with open(path, "rb") as fh:
        return tomllib.load(fh)


_DEFAULTS = {
    "seed": 0,
    "out_dir": "run",
    "data": {"source": "toy", "split_fraction": 0.8, "upsample_minority": False,
             "include_group_feature": True, "exclude_constraint_regions": False},
    "prior": {"kind": "baseline", "base_sd": 1.0},
    "inference": {"method": "hmc", "init": "prior"},
    "predictive": {"grid": "none", "n_points": 200},
    "constraints": [],
    "evaluation": [],
}

_HMC_DEFAULTS = {"burn_in": 2000, "n_collect": 200, "thin": 10, "leapfrog_steps": 50,
                 "step_size": 0.05, "target_accept": 0.9}
_SVGD_DEFAULTS = {"n_particles": 50, "iters": 1000, "lr": 0.75, "batch_size": 0}
_BBB_DEFAULTS = {"epochs": 10000, "lr": 0.1, "n_eps": 5, "n_samples_out": 1000,
                 "init_sigma": 1.0, "batch_size": 0}
_SAMPLED_DEFAULTS = {"n_points": 30, "resample_each_iteration": False}
_AMORTIZED_DEFAULTS = {"epochs": 50, "lr": 0.1, "points_per_epoch": 30, "shrink": 35.0,
                  "init_sigma": 1.0, "mu_jitter": 0.0}


def _merged(defaults: dict, got: dict, context: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in got.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merged(out[key], value, f"{context}.{key}")
        else:
            out[key] = value
    return out


def resolve_config(cfg: dict, config_dir: Path | None = None,
                   seed_override: int | None = None) -> dict:
    """Fill defaults, inline referenced files, and validate statically.

    The result is canonical: resolving it again is the identity, so the
    written snapshot re-runs to byte-identical artifacts.
    """
    cfg = _merged(_DEFAULTS, cfg, "config")
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    if "arch" not in cfg:
        raise ConfigError("config needs an [arch] section")
    arch = cfg["arch"]
    arch.setdefault("input_dim", 0)
    arch.setdefault("n_classes", 0)
    arch.setdefault("noise_sd", 0.1)
    if "hidden" not in arch or "task" not in arch:
        raise ConfigError("[arch] needs 'hidden' and 'task'")

    data = cfg["data"]
    if data["source"] not in ("toy", "csv", "surrogate"):
        raise ConfigError(f"unknown data source {data['source']!r}")
    if data["source"] == "toy":
        if data.get("kind") not in TOY_KINDS:
            raise ConfigError(f"unknown toy kind {data.get('kind')!r}")
        data.setdefault("n", 10)
    if data["source"] in ("csv", "surrogate"):
        schema = data.get("schema")
        if isinstance(schema, str) and schema.endswith(".toml"):
            spath = Path(schema)
            if not spath.is_absolute() and config_dir is not None:
                spath = config_dir / spath
            if not spath.exists():
                raise ConfigError(f"schema file {spath} does not exist")
            data["schema"] = str(spath)
        elif isinstance(schema, str) and schema not in ("clinical", "compas", "credit"):
            raise ConfigError(f"unknown builtin schema {schema!r}")
        if schema is None:
            raise ConfigError("csv/surrogate data needs a schema")
        if data["source"] == "surrogate" and not isinstance(schema, str):
            raise ConfigError("surrogate data needs a builtin schema name")
        if data["source"] == "csv":
            path = data.get("path")
            if not path:
                raise ConfigError("csv data needs a path")
            resolved = Path(path)
            if not resolved.is_absolute() and config_dir is not None:
                resolved = config_dir / resolved
            if not resolved.exists():
                raise ConfigError(f"dataset path {resolved} does not exist")
            data["path"] = str(resolved)
        else:
            data.setdefault("n", 4000)
    if not 0.0 < float(data["split_fraction"]) < 1.0:
        raise ConfigError("split_fraction must lie in (0, 1)")

    # constraints may live in a separate TOML file
    if isinstance(cfg["constraints"], str):
        cpath = Path(cfg["constraints"])
        if not cpath.is_absolute() and config_dir is not None:
            cpath = config_dir / cpath
        if not cpath.exists():
            raise ConfigError(f"constraints file {cpath} does not exist")
        with open(cpath, "rb") as fh:
            cfg["constraints"] = tomllib.load(fh).get("constraints", [])

    prior = cfg["prior"]
    if prior["kind"] not in ("baseline", "sampled", "amortized"):
        raise ConfigError(f"unknown prior kind {prior['kind']!r}")
    if float(prior["base_sd"]) <= 0:
        raise ConfigError("prior.base_sd must be positive")
    if prior["kind"] == "sampled":
        prior["sampled"] = _merged(_SAMPLED_DEFAULTS, prior.get("sampled", {}), "prior.sampled")
        if not prior["sampled"].get("terms"):
            raise ConfigError("a sampled-constraint prior needs [[prior.sampled.terms]]")
    if prior["kind"] == "amortized":
        prior["amortized"] = _merged(_AMORTIZED_DEFAULTS, prior.get("amortized", {}), "prior.amortized")
        if prior["amortized"]["epochs"] < 1:
            raise ConfigError("prior.amortized.epochs must be >= 1")
        load_prefix = prior["amortized"].get("load")
        if load_prefix:
            prefix = Path(load_prefix)
            if not prefix.is_absolute() and config_dir is not None:
                prefix = config_dir / prefix
            if not Path(str(prefix) + ".mu").exists():
                raise ConfigError(f"amortized prior file {prefix}.mu does not exist")
            prior["amortized"]["load"] = str(prefix)

    inf = cfg["inference"]
    if inf["method"] not in ("hmc", "svgd", "bbb"):
        raise ConfigError(f"unknown inference method {inf['method']!r}")
    key = inf["method"]
    defaults = {"hmc": _HMC_DEFAULTS, "svgd": _SVGD_DEFAULTS, "bbb": _BBB_DEFAULTS}[key]
    inf[key] = _merged(defaults, inf.get(key, {}), f"inference.{key}")

    pred = cfg["predictive"]
    if pred["grid"] not in ("none", "1d", "2d", "train", "test"):
        raise ConfigError(f"unknown predictive grid {pred['grid']!r}")
    if pred["grid"] in ("1d", "2d") and "ranges" not in pred:
        raise ConfigError("grid predictive needs 'ranges'")

    known_metrics = {"violation_fraction", "constrained_mass", "classification",
                     "group_fractions", "effort_of_recourse", "rejection_rate"}
    for entry in cfg["evaluation"]:
        if entry.get("metric") not in known_metrics:
            raise ConfigError(f"unknown metric {entry.get('metric')!r}")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# Data assembly


def _toy_split(cfg_data: dict, seed: int) -> SplitDataset:
    ds = gen_toy(cfg_data["kind"], int(cfg_data["n"]), seed,
                 noise_sd=cfg_data.get("noise_sd"))
    q = ds.inputs.shape[1]
    names = [f"x_{i + 1}" for i in range(q)]
    raw = {name: ds.inputs[:, i].copy() for i, name in enumerate(names)}
    empty = Dataset(np.zeros((0, q)), np.zeros(0, dtype=ds.targets.dtype))
    return SplitDataset(train=ds, test=empty, feature_names=names,
                        record=[{"name": n, "transform": "none"} for n in names],
                        seed=seed, raw_train=raw, raw_test={})


def _schema_from_config(data_cfg: dict) -> list[FeatureSpec]:
    schema = data_cfg["schema"]
    if isinstance(schema, str):
        if schema.endswith(".toml"):
            return load_schema_toml(schema)
        return builtin_schema(schema, include_group_feature=bool(
            data_cfg.get("include_group_feature", True)))
    return [FeatureSpec(name=s["name"], transform=s.get("transform", "none"),
                        role=s.get("role", "feature"),
                        as_feature=bool(s.get("as_feature", True)))
            for s in schema]


def build_split(cfg: dict, seed: int, out_root: Path) -> SplitDataset:
    data_cfg = cfg["data"]
    if data_cfg["source"] == "toy":
        return _toy_split(data_cfg, seed)
    cache_dir = out_root / "_data"
    split_cache = None
    if data_cfg.get("cache"):
        key = config_hash({"data": data_cfg, "seed": seed})[:16]
        cache_dir.mkdir(parents=True, exist_ok=True)
        split_cache = cache_dir / f"split_{key}.npz"
        if split_cache.exists():
            return load_split(split_cache)
    schema = _schema_from_config(data_cfg)
    if data_cfg["source"] == "surrogate":
        name = data_cfg["schema"]
        cache_dir.mkdir(parents=True, exist_ok=True)
        path = cache_dir / f"{name}_n{data_cfg['n']}_s{seed}.csv"
        if not path.exists():
            write_surrogate_csv(name, path, int(data_cfg["n"]), seed)
    else:
        path = Path(data_cfg["path"])
    table = load_csv(path, schema)
    split = preprocess(
        table,
        schema,
        split_fraction=float(data_cfg["split_fraction"]),
        upsample_minority=bool(data_cfg["upsample_minority"]),
        seed=seed,
    )
    flt = data_cfg.get("train_filter")
    if flt:
        split = split.drop_train_rows(~_filter_mask(split.raw_train, flt))
    if split_cache is not None:
        save_split(split_cache, split)
    return split


_OPS = {"<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal,
        "==": np.equal}


def _filter_mask(raw: dict, flt: dict) -> np.ndarray:
    col = flt.get("column")
    if col not in raw:
        raise ConfigError(f"filter column {col!r} not in dataset")
    op = flt.get("op", ">=")
    if op not in _OPS:
        raise ConfigError(f"unknown filter op {op!r}")
    return _OPS[op](raw[col], float(flt["value"]))


# ---------------------------------------------------------------------------
# Constraint resolution against the dataset


def _data_box(split: SplitDataset) -> tuple[np.ndarray, np.ndarray]:
    x = split.train.inputs
    if x.shape[0] == 0:
        raise ConfigError("cannot derive a data box from an empty training set")
    return x.min(axis=0), x.max(axis=0)


def resolve_constraint_spec(spec: dict, split: SplitDataset) -> Constraint:
    """Turn a config constraint into a Constraint in model coordinates.

    Regions may give explicit lower/upper vectors, or per-feature bounds
    (``feature_bounds``) in model or raw units with the training-data box
    filling the unspecified dimensions. Bernoulli targets may name a feature
    (``p_feature``) instead of writing an x_i expression.
    """
    spec = copy.deepcopy(spec)
    region = spec.get("region", {})
    if "feature_bounds" in region:
        lo, hi = _data_box(split)
        lo, hi = lo.copy(), hi.copy()
        units = region.pop("units", "model")
        for feat, bounds in region.pop("feature_bounds").items():
            idx = split.feature_index(feat)
            lo_v = -np.inf if bounds[0] in ("-inf", None) else float(bounds[0])
            hi_v = np.inf if bounds[1] in ("inf", None) else float(bounds[1])
            if units == "raw":
                lo_v = split.transform_bound(feat, lo_v)
                hi_v = split.transform_bound(feat, hi_v)
            lo[idx] = max(lo[idx], lo_v) if np.isfinite(lo_v) else lo[idx]
            hi[idx] = min(hi[idx], hi_v) if np.isfinite(hi_v) else hi[idx]
            if lo[idx] > hi[idx]:
                raise ConfigError(f"empty region after bounding feature {feat!r}")
        region["lower"] = lo.tolist()
        region["upper"] = hi.tolist()
        region["kind"] = "box"
        spec["region"] = region
    dist = spec.get("dist")
    if dist and "p_feature" in dist:
        idx = split.feature_index(dist.pop("p_feature"))
        dist["p"] = f"x_{idx + 1}"
    return constraint_from_dict(spec)


# ---------------------------------------------------------------------------
# Prior construction


_FAMILY_PARAMS = {
    "gmm": lambda t: GmmParams(
        means=tuple(_mean_entry(m) for m in t["means"]),
        sd=float(t["sd"]),
        weights=tuple(float(w) for w in t["weights"]) if "weights" in t else None,
    ),
    "dirichlet": lambda t: DirichletParams(gamma=float(t["gamma"]), c=float(t["c"])),
    "neg_exp": lambda t: NegExpParams(gamma=float(t["gamma"]), tau0=float(t["tau0"]),
                                      tau1=float(t["tau1"])),
    "dist": lambda t: None,
}


def _mean_entry(m):
    return Expression(m) if isinstance(m, str) else float(m)


def build_prior(cfg: dict, arch: NetworkArch, constraint_objs: list[Constraint],
                seeds: dict, out_artifacts: dict):
    prior_cfg = cfg["prior"]
    base_sd = float(prior_cfg["base_sd"])
    if prior_cfg["kind"] == "baseline":
        return IsotropicGaussianPrior(base_sd, arch.n_params)

    by_name = {c.name: c for c in constraint_objs}
    if prior_cfg["kind"] == "sampled":
        ccfg = prior_cfg["sampled"]
        terms = []
        term_seeds = _child_seeds(seeds["constraints"], len(ccfg["terms"]))
        for tseed, tcfg in zip(term_seeds, ccfg["terms"]):
            constraint = _pick_constraint(tcfg, by_name, constraint_objs)
            family = "dist" if constraint.polarity == "probabilistic" else tcfg["family"]
            params = _FAMILY_PARAMS[family](tcfg)
            n_points = int(tcfg.get("n_points", ccfg["n_points"]))
            placement = tcfg.get("placement", "random")
            if placement == "grid":
                sample = grid_region(constraint.region, n_points)
            elif placement == "random":
                sample = sample_region(constraint.region, n_points, tseed)
            else:
                raise ConfigError(f"unknown anchor placement {placement!r}")
            terms.append(build_constraint_term(constraint, family, params, sample, arch))
        resample = 1 if ccfg.get("resample_each_iteration") else 0
        return SampledConstraintPrior(arch, base_sd, terms, resample_every=resample,
                         resample_seed=seeds["constraints"])

    # amortized prior: optimize fresh, or reuse moments saved by an earlier
    # run (they amortize across training tasks)
    acfg = prior_cfg["amortized"]
    if acfg.get("load"):
        lam = load_variational(acfg["load"], expected_arch=arch)
    else:
        if not constraint_objs:
            raise ConfigError("an amortized prior needs at least one constraint")
        adapter = ScalarHeadAdapter(arch)
        lam, history = optimize_amortized_prior(
            adapter,
            constraint_objs,
            epochs=int(acfg["epochs"]),
            lr=float(acfg["lr"]),
            points_per_epoch=int(acfg["points_per_epoch"]),
            seed=seeds["amortized"],
            init_sigma=float(acfg["init_sigma"]),
            mu_jitter=float(acfg["mu_jitter"]),
        )
        out_artifacts["amortized_history"] = history
    out_artifacts["amortized_moments"] = lam
    return make_amortized_prior(lam, shrink=float(acfg["shrink"]))


def _pick_constraint(tcfg: dict, by_name: dict, constraint_objs: list[Constraint]) -> Constraint:
    ref = tcfg.get("constraint")
    if ref is None:
        if len(constraint_objs) == 1:
            return constraint_objs[0]
        raise ConfigError("a prior term must name its constraint when several exist")
    if ref not in by_name:
        raise ConfigError(f"prior term references unknown constraint {ref!r}")
    return by_name[ref]


# ---------------------------------------------------------------------------
# Inference dispatch


def run_inference(cfg: dict, arch: NetworkArch, split: SplitDataset, prior,
                  seeds: dict) -> PosteriorSamples:
    inf = cfg["inference"]
    method = inf["method"]
    seed = seeds["inference"]
    rng = np.random.default_rng(seed)
    if method == "hmc":
        p = inf["hmc"]
        likelihood = BnnLikelihood(arch, split.train)
        target = BnnPosterior(likelihood, prior)
        init = prior.sample(rng, 1)[0]
        return hmc(
            target, init,
            burn_in=int(p["burn_in"]), n_collect=int(p["n_collect"]),
            thin=int(p["thin"]), n_leapfrog=int(p["leapfrog_steps"]),
            step_size=float(p["step_size"]), target_accept=float(p["target_accept"]),
            seed=seed,
        )
    if method == "svgd":
        p = inf["svgd"]
        batch = int(p["batch_size"]) or None
        likelihood = BnnLikelihood(arch, split.train, batch_size=batch, batch_seed=seed)
        target = BnnPosterior(likelihood, prior)
        init = prior.sample(rng, int(p["n_particles"]))
        return svgd(target, n_particles=int(p["n_particles"]), n_iters=int(p["iters"]),
                    lr=float(p["lr"]), seed=seed, init=init)
    p = inf["bbb"]
    batch = int(p["batch_size"]) or None
    likelihood = BnnLikelihood(arch, split.train, batch_size=batch, batch_seed=seed)
    result = bbb(
        likelihood, prior, arch.n_params,
        epochs=int(p["epochs"]), lr=float(p["lr"]), n_eps=int(p["n_eps"]),
        n_samples_out=int(p["n_samples_out"]), seed=seed,
        init_sigma=float(p["init_sigma"]),
    )
    return result.samples


# ---------------------------------------------------------------------------
# Predictive grid and artifact writing


def _query_grid(cfg: dict, split: SplitDataset) -> np.ndarray | None:
    pred = cfg["predictive"]
    grid = pred["grid"]
    if grid == "none":
        return None
    if grid == "train":
        return split.train.inputs
    if grid == "test":
        return split.test.inputs
    n = int(pred["n_points"])
    ranges = pred["ranges"]
    if grid == "1d":
        lo, hi = ranges[0]
        return np.linspace(float(lo), float(hi), n).reshape(-1, 1)
    (x0, x1), (y0, y1) = ranges[0], ranges[1]
    xs = np.linspace(float(x0), float(x1), n)
    ys = np.linspace(float(y0), float(y1), n)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _predictive_csv(arch: NetworkArch, summary, hash_hex: str) -> str:
    q = summary.query.shape[1]
    lines = [f"# config_hash={hash_hex}"]
    cols = [f"x_{i + 1}" for i in range(q)]
    if arch.task == "regression":
        cols += ["mean", "q2_5", "q50", "q97_5"]
        mat = np.column_stack([
            summary.query, summary.mean,
            summary.quantiles[2.5], summary.quantiles[50.0], summary.quantiles[97.5],
        ])
    else:
        k = summary.probs.shape[1]
        cols += [f"p_{i}" for i in range(k)]
        mat = np.column_stack([summary.query, summary.probs])
    lines.append(",".join(cols))
    for row in mat:
        lines.append(",".join(format(v, ".17g") for v in row))
    return "\n".join(lines) + "\n"


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Evaluation plan


def evaluate_plan(cfg: dict, arch: NetworkArch, split: SplitDataset,
                  samples: PosteriorSamples, constraint_objs: list[Constraint],
                  seeds: dict) -> list[MetricReport]:
    by_name = {c.name: c for c in constraint_objs}
    reports = []
    eval_seeds = _child_seeds(seeds["evaluation"], max(1, len(cfg["evaluation"])))
    for eseed, entry in zip(eval_seeds, cfg["evaluation"]):
        metric = entry["metric"]
        if metric == "violation_fraction":
            constraint = _metric_constraint(entry, by_name)
            n_points = int(entry.get("n_points", 1000))
            frac, violated = violation_fraction(samples, arch, constraint, n_points, eseed)
            reports.append(MetricReport(name=metric, value=frac,
                                        constraint=constraint.name, n=n_points,
                                        extras={"violated": violated}))
        elif metric == "constrained_mass":
            constraint = _metric_constraint(entry, by_name)
            n_points = int(entry.get("n_points", 200))
            pts = sample_region(constraint.region, n_points, eseed).points
            mass = float(np.mean([
                epsilon_satisfaction(samples, arch, constraint, x) for x in pts
            ]))
            reports.append(MetricReport(name=metric, value=mass,
                                        constraint=constraint.name, n=n_points))
        elif metric == "classification":
            split_name = entry.get("split", "test")
            data = split.train if split_name == "train" else split.test
            if len(data) == 0:
                raise ConfigError(f"classification metric on empty {split_name} split")
            preds = point_predictions(samples, arch, data.inputs)
            stats = classification_metrics(preds, data.targets)
            reports.append(MetricReport(name="accuracy", value=stats["accuracy"],
                                        split=split_name, n=len(data)))
            reports.append(MetricReport(name="f1", value=stats["f1"],
                                        split=split_name, n=len(data)))
        elif metric == "group_fractions":
            split_name = entry.get("split", "train")
            data = split.train if split_name == "train" else split.test
            raw = split.raw_train if split_name == "train" else split.raw_test
            group_col = entry.get("group")
            if group_col not in raw:
                raise ConfigError(f"group column {group_col!r} not in dataset")
            preds = point_predictions(samples, arch, data.inputs)
            stats = group_positive_fraction(preds, raw[group_col])
            reports.append(MetricReport(
                name=metric, value=stats["gap"], split=split_name, n=len(data),
                extras={"fraction_group1": stats["fraction_group1"],
                        "fraction_group0": stats["fraction_group0"],
                        "group": group_col},
            ))
        elif metric == "effort_of_recourse":
            split_name = entry.get("split", "test")
            data = split.train if split_name == "train" else split.test
            raw = split.raw_train if split_name == "train" else split.raw_test
            feature = entry["feature"]
            if feature not in raw:
                raise ConfigError(f"feature {feature!r} not in dataset")
            subset = _filter_mask(raw, entry["subset"])
            preds = point_predictions(samples, arch, data.inputs)
            effort = effort_of_recourse(preds, raw[feature], subset)
            reports.append(MetricReport(name=metric, value=effort, split=split_name,
                                        n=int(subset.sum()),
                                        extras={"feature": feature}))
        elif metric == "rejection_rate":
            constraint = _metric_constraint(entry, by_name)
            n_check = int(entry.get("check_points", 50))
            check = sample_region(constraint.region, n_check, eseed)
            _, rate = rejection_sample(samples, arch, constraint, check)
            reports.append(MetricReport(name=metric, value=rate,
                                        constraint=constraint.name, n=n_check))
    return reports


def _metric_constraint(entry: dict, by_name: dict) -> Constraint:
    ref = entry.get("constraint")
    if ref is None and len(by_name) == 1:
        return next(iter(by_name.values()))
    if ref not in by_name:
        raise ConfigError(f"metric references unknown constraint {ref!r}")
    return by_name[ref]


# ---------------------------------------------------------------------------
# Top-level commands


def run(config_path, out_root=None, seed_override=None) -> dict:
    """Execute one experiment; returns a summary dict (paths + metrics)."""
    config_path = Path(config_path)
    cfg = resolve_config(load_config(config_path), config_path.parent, seed_override)
    hash_hex = config_hash(cfg)
    root = Path(out_root or os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    out_dir = root / cfg["out_dir"]

    seed = int(cfg["seed"])
    names = ["data", "constraints", "amortized", "inference", "evaluation"]
    seeds = dict(zip(names, _child_seeds(seed, len(names))))

    split = build_split(cfg, seeds["data"], root)

    arch_cfg = cfg["arch"]
    input_dim = int(arch_cfg["input_dim"]) or len(split.feature_names)
    arch = NetworkArch(
        input_dim=input_dim,
        hidden_layers=tuple(int(h) for h in arch_cfg["hidden"]),
        task=arch_cfg["task"],
        n_classes=int(arch_cfg["n_classes"]),
        noise_sd=float(arch_cfg["noise_sd"]),
    )
    if input_dim != len(split.feature_names):
        raise ConfigError(
            f"arch.input_dim={input_dim} but the data has {len(split.feature_names)} features")

    constraint_objs = [resolve_constraint_spec(s, split) for s in cfg["constraints"]]
    names_seen = set()
    for c in constraint_objs:
        if c.name in names_seen:
            raise ConfigError(f"duplicate constraint name {c.name!r}")
        names_seen.add(c.name)

    if cfg["data"]["exclude_constraint_regions"] and len(split.train):
        mask = np.zeros(len(split.train), dtype=bool)
        for c in constraint_objs:
            if c.deterministic:
                mask |= c.region.contains_batch(split.train.inputs)
        split = split.drop_train_rows(mask)

    artifacts: dict = {}
    prior = build_prior(cfg, arch, constraint_objs, seeds, artifacts)
    samples = run_inference(cfg, arch, split, prior, seeds)

    grid = _query_grid(cfg, split)
    summary = None
    if grid is not None and grid.shape[0]:
        summary = posterior_predictive(samples, arch, grid, keep_sample_means=False)

    reports = evaluate_plan(cfg, arch, split, samples, constraint_objs, seeds)

    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = json.dumps(cfg, sort_keys=True, indent=2) + "\n"
    _atomic_write(out_dir / "config_resolved.json", snapshot.encode())
    metrics_doc = {
        "schema_version": METRICS_SCHEMA_VERSION,
        "config_hash": hash_hex,
        "metrics": [r.to_json() for r in reports],
    }
    _atomic_write(out_dir / "metrics.json",
                  (json.dumps(metrics_doc, sort_keys=True, indent=2) + "\n").encode())
    if summary is not None:
        _atomic_write(out_dir / "predictive.csv",
                      _predictive_csv(arch, summary, hash_hex).encode())
    tmp = out_dir / "samples.bin.tmp"
    save_samples(tmp, arch, samples, config_hash=hash_hex)
    os.replace(tmp, out_dir / "samples.bin")
    if "amortized_moments" in artifacts:
        save_variational(out_dir / "amortized", arch, artifacts["amortized_moments"])

    return {
        "out_dir": str(out_dir),
        "config_hash": hash_hex,
        "metrics": metrics_doc["metrics"],
        "diagnostics": samples.diagnostics,
    }


def compare(dir_a, dir_b, metric: str, split: str = "") -> dict:
    """Side-by-side values of one metric from two finished runs."""
    values = []
    for d in (dir_a, dir_b):
        path = Path(d) / "metrics.json"
        if not path.exists():
            raise ConfigError(f"{path} does not exist (run not finished?)")
        doc = json.loads(path.read_text())
        match = [m for m in doc["metrics"]
                 if m["name"] == metric and (not split or m.get("split") == split)]
        if not match:
            raise ConfigError(f"metric {metric!r} not found in {path}")
        values.append(match[0]["value"])
    return {
        "metric": metric,
        "a": {"dir": str(dir_a), "value": values[0]},
        "b": {"dir": str(dir_b), "value": values[1]},
        "delta": values[1] - values[0],
    }


def _set_by_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"config path {dotted!r} does not exist")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"config path {dotted!r} does not exist")
    node[keys[-1]] = value


def sweep(config_path, param: str, values, out_root=None, seed_override=None) -> dict:
    """Re-run one config across a list of values for a dotted config path."""
    config_path = Path(config_path)
    base = resolve_config(load_config(config_path), config_path.parent, seed_override)
    root = Path(out_root or os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    runs = []
    for value in values:
        cfg = copy.deepcopy(base)
        _set_by_path(cfg, param, value)
        cfg["out_dir"] = f"{base['out_dir']}/sweep_{param.split('.')[-1]}={value}"
        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
            json.dump(cfg, fh)
            tmp_path = fh.name
        try:
            result = run(tmp_path, out_root=root)
        finally:
            os.unlink(tmp_path)
        flat = {}
        for m in result["metrics"]:
            key = m["name"]
            if key in flat and m.get("constraint"):
                key = f"{m['name']}[{m['constraint']}]"
            flat.setdefault(key, m["value"])
        runs.append({"value": value, "dir": result["out_dir"], "metrics": flat})
    doc = {"param": param, "values": list(values), "runs": runs,
           "config_hash": config_hash(base)}
    sweep_dir = root / base["out_dir"]
    sweep_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(sweep_dir / "sweep.json",
                  (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode())
    return doc


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ocbnn",
                                     description="Constraint-aware BNN experiment runner")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help=f"output root (default ${OUTPUT_ROOT_ENV} or ./runs)")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_cmp = sub.add_parser("compare", help="diff one metric between two runs")
    p_cmp.add_argument("dir_a")
    p_cmp.add_argument("dir_b")
    p_cmp.add_argument("--metric", required=True)
    p_cmp.add_argument("--split", default="")

    p_sweep = sub.add_parser("sweep", help="re-run a config across values of one parameter")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True, help="dotted config path, e.g. prior.sampled.n_points")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--seed", type=int, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            result = run(args.config, out_root=args.out, seed_override=args.seed)
            print(json.dumps(result, indent=2, sort_keys=True, default=float))
        elif args.command == "compare":
            print(json.dumps(compare(args.dir_a, args.dir_b, args.metric, args.split),
                             indent=2, sort_keys=True))
        else:
            values = [_parse_value(v) for v in args.values.split(",")]
            doc = sweep(args.config, args.param, values, out_root=args.out,
                        seed_override=args.seed)
            print(json.dumps(doc, indent=2, sort_keys=True))
    except (ConfigError, *CONFIG_ERRORS) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except InferenceError as exc:
        print(f"error: inference: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
