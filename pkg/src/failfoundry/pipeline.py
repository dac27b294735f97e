"""End-to-end experiment runner driven by an INI config.

Every stage reads its own ``[stage]`` section, works on a shared context and
writes its outputs below the configured output directory. A manifest records
stage status, an input hash, an output hash and wall time.
"""

import configparser
import csv
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import bayes, cluster, dataio, gbt, lasso, metrics, plotting, reliability, stack
from ._rng import derive_seed

log = logging.getLogger(__name__)

STAGES = ("generate", "features", "split", "undersample", "gbt", "metrics", "cluster",
          "impute", "lasso", "bayes", "stack", "reliability")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data, h=_FNV_OFFSET):
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    stages: list
    output: str
    seed: int = 0
    sections: dict = field(default_factory=dict)
    base_dir: str = "."

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        cfg = cls.from_parser(parser, os.path.dirname(os.path.abspath(path)))
        return cfg

    @classmethod
    def from_string(cls, text, base_dir="."):
        parser = configparser.ConfigParser()
        parser.read_string(text)
        return cls.from_parser(parser, base_dir)

    @classmethod
    def from_parser(cls, parser, base_dir):
        if not parser.has_section("experiment"):
            raise ConfigError("missing [experiment] section")
        exp = parser["experiment"]
        stages = [s.strip() for s in exp.get("stages", "").split(",") if s.strip()]
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stage(s) {unknown}; known: {', '.join(STAGES)}")
        if "output" not in exp:
            raise ConfigError("[experiment] needs an 'output' directory")
        output = exp["output"]
        if not os.path.isabs(output):
            output = os.path.join(base_dir, output)
        try:
            seed = exp.getint("seed", 0)
        except ValueError as exc:
            raise ConfigError(f"invalid seed: {exc}") from None
        sections = {name: dict(parser[name]) for name in parser.sections() if name != "experiment"}
        return cls(stages, output, seed, sections, base_dir)

    def section_text(self, name):
        items = sorted(self.sections.get(name, {}).items())
        return "\n".join(f"{k}={v}" for k, v in items)


class _Params:
    """Typed access to one config section."""

    def __init__(self, name, values):
        self.name = name
        self.values = values

    def _get(self, key, default, conv):
        if key not in self.values:
            return default
        try:
            return conv(self.values[key])
        except ValueError:
            raise ConfigError(f"[{self.name}] {key}: invalid value {self.values[key]!r}") from None

    def int(self, key, default=None):
        return self._get(key, default, int)

    def float(self, key, default=None):
        return self._get(key, default, float)

    def str(self, key, default=None):
        return self._get(key, default, str)

    def floats(self, key, default=()):
        return self._get(key, tuple(default),
                         lambda v: tuple(float(x) for x in v.split(",") if x.strip()))

    def ints(self, key, default=()):
        return self._get(key, tuple(default),
                         lambda v: tuple(int(x) for x in v.split(",") if x.strip()))


class _Context:
    def __init__(self, config):
        self.config = config
        self.root = os.path.realpath(config.output)
        self.state = {}
        self.written = []

    def params(self, name):
        return _Params(name, self.config.sections.get(name, {}))

    def seed(self, stage):
        return int(derive_seed(self.config.seed, STAGES.index(stage)))

    def path(self, name):
        full = os.path.realpath(os.path.join(self.root, name))
        if os.path.commonpath([full, self.root]) != self.root:
            raise StageError(f"refusing to write outside the output directory: {name}")
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.written.append(full)
        return full

    def need(self, key, stage, producer):
        if key not in self.state:
            raise StageError(f"stage '{stage}' requires an earlier '{producer}' stage")
        return self.state[key]


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format(v, ".17g") if isinstance(v, (float, np.floating)) else v
                        for v in r])


def _svg(ctx, csv_name, kind, svg_name, title=""):
    plotting.plot(ctx.path(csv_name), kind, ctx.path(svg_name), title)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_generate(ctx):
    p = ctx.params("data")
    source = p.str("source", "synthetic")
    if source == "synthetic":
        spec = dataio.SyntheticSpec(
            n_rows=p.int("n_rows", 4000), n_features=p.int("n_features", 30),
            positive_rate=p.float("positive_rate", 0.05),
            coefficients=p.floats("coefficients", (2.0, -1.5, 1.5, 1.0, -1.0)),
            n_part_types=p.int("n_part_types", 1), n_shared=p.int("n_shared", None),
            n_date_columns=p.int("n_date_columns", 3),
            n_categorical_columns=p.int("n_categorical_columns", 1),
            seed=ctx.seed("generate"))
        d = dataio.make_synthetic(spec)
    else:
        path = source if os.path.isabs(source) else os.path.join(ctx.config.base_dir, source)
        schema_path = p.str("schema")
        schema = None
        if schema_path:
            if not os.path.isabs(schema_path):
                schema_path = os.path.join(ctx.config.base_dir, schema_path)
            schema = dataio.read_schema(schema_path)
        d = dataio.load_csv(path, schema)
    ctx.state["data"] = d
    dataio.save_csv(d, ctx.path("data/data.csv"))
    dataio.save_schema(d, ctx.path("data/schema.csv"))


def stage_features(ctx):
    d = ctx.need("data", "features", "generate")
    dates = [c for c, k in zip(d.columns, d.kinds) if k == dataio.DATE]
    cats = [c for c, k in zip(d.columns, d.kinds) if k == dataio.CATEGORICAL]
    if dates:
        d = dataio.add_time_on_line(d, dates).drop(dates)
    if cats:
        d = dataio.one_hot(d, cats)
    ctx.state["data"] = d
    _write_rows(ctx.path("features/columns.csv"), ["column", "kind"], zip(d.columns, d.kinds))


def stage_split(ctx):
    d = ctx.need("data", "split", "generate")
    frac = ctx.params("split").float("validation_fraction", 0.25)
    train, valid = dataio.train_validation_split(d, dataio.SplitSpec(frac, ctx.seed("split")))
    ctx.state["train"], ctx.state["valid"] = train, valid
    _write_rows(ctx.path("split/sizes.csv"), ["part", "rows", "positives"],
                [("train", train.n_rows, int(train.labels.sum())),
                 ("validation", valid.n_rows, int(valid.labels.sum()))])


def stage_undersample(ctx):
    train = ctx.state.get("train") or ctx.need("data", "undersample", "generate")
    ratio = ctx.params("undersample").float("ratio", 10.0)
    small = dataio.undersample(train, ratio, seed=ctx.seed("undersample"))
    ctx.state["train"] = small
    _write_rows(ctx.path("undersample/ids.csv"), ["Id"], ([int(i)] for i in small.ids))


def _gbt_params(p, seed, **defaults):
    return gbt.GbtParams(
        n_trees=p.int("n_trees", defaults.get("n_trees", 100)),
        max_depth=p.int("max_depth", defaults.get("max_depth", 6)),
        learning_rate=p.float("learning_rate", 0.1),
        colsample_bytree=p.float("colsample_bytree", defaults.get("colsample_bytree", 1.0)),
        min_child_weight=p.float("min_child_weight", 1.0),
        l2_reg=p.float("l2_reg", 1.0), seed=seed)


def stage_gbt(ctx):
    train = ctx.state.get("train") or ctx.need("data", "gbt", "generate")
    valid = ctx.state.get("valid", train)
    p = ctx.params("gbt")
    params = _gbt_params(p, ctx.seed("gbt"))
    model = gbt.fit(train, params)
    top_k = p.int("top_k", 0)
    fi = gbt.importance(model)
    if top_k:
        keep = [model.feature_names[j] for j in gbt.top_k_features(fi, top_k)]
        if keep:
            train = train.select(keep)
            valid = valid.select(keep)
            model = gbt.fit(train, params)
            fi = gbt.importance(model)
    gbt.save(model, ctx.path("gbt/model.txt"))
    order = np.lexsort((np.arange(len(fi.gains)), -fi.gains))
    _write_rows(ctx.path("gbt/importance.csv"), ["feature", "gain"],
                [(fi.feature_names[j], float(fi.gains[j])) for j in order])
    probs = gbt.predict_proba(model, valid)
    ctx.state["scores"] = (valid.labels, probs)
    _write_rows(ctx.path("gbt/validation_predictions.csv"), ["Id", "label", "prob"],
                [(int(i), int(y), float(pr)) for i, y, pr in zip(valid.ids, valid.labels, probs)])


def stage_metrics(ctx):
    labels, probs = ctx.need("scores", "metrics", "gbt")
    step = ctx.params("metrics").float("grid_step", 0.01)
    roc = metrics.roc_auc(labels, probs)
    sweep = metrics.mcc_sweep(labels, probs, step)
    _write_rows(ctx.path("metrics/roc.csv"), ["fpr", "tpr"], zip(roc.fpr, roc.tpr))
    _write_rows(ctx.path("metrics/mcc_sweep.csv"), ["threshold", "mcc"],
                zip(sweep.thresholds, sweep.mcc_values))
    _, exhaustive = metrics.best_mcc_exhaustive(labels, probs)
    _write_rows(ctx.path("metrics/summary.csv"), ["metric", "value"],
                [("auc", roc.auc), ("best_threshold", sweep.best_threshold),
                 ("best_mcc", sweep.best_mcc), ("exhaustive_best_mcc", exhaustive)])
    _svg(ctx, "metrics/roc.csv", "roc", "metrics/roc.svg", "ROC curve")
    _svg(ctx, "metrics/mcc_sweep.csv", "line", "metrics/mcc_sweep.svg", "MCC vs threshold")


def stage_cluster(ctx):
    d = ctx.need("data", "cluster", "generate")
    p = ctx.params("cluster")
    seed = ctx.seed("cluster")
    numeric = d.select([c for c, k in zip(d.columns, d.kinds) if k != dataio.CATEGORICAL])
    mask = numeric.mask.astype(np.float64)
    n_sub = p.int("feature_subsample", 0)
    if n_sub and n_sub < mask.shape[1]:
        cols = np.sort(np.random.default_rng(seed).choice(mask.shape[1], n_sub, replace=False))
        mask = mask[:, cols]
    k_lo, k_hi = (int(v) for v in p.str("k_range", "1:10").split(":"))
    restarts = p.int("restarts", 3)
    curve = cluster.elbow(mask, range(k_lo, min(k_hi, mask.shape[0]) + 1), seed, restarts)
    _write_rows(ctx.path("cluster/elbow.csv"), ["k", "wcss"], curve)
    _svg(ctx, "cluster/elbow.csv", "line", "cluster/elbow.svg", "Elbow curve")
    k = p.int("k", curve[-1][0] if len(curve) < 3 else cluster.knee(curve))
    km = min((cluster.kmeans(mask, k, derive_seed(seed, r)) for r in range(restarts)),
             key=lambda r: r.wcss)
    ctx.state["kmeans"] = km
    _write_rows(ctx.path("cluster/assignments.csv"), ["Id", "cluster"],
                zip((int(i) for i in d.ids), (int(a) for a in km.assignments)))


def stage_impute(ctx):
    d = ctx.need("data", "impute", "generate")
    p = ctx.params("impute")
    km = ctx.state.get("kmeans")
    if km is not None:
        sizes = np.bincount(km.assignments, minlength=km.k)
        cid = p.int("cluster_id", int(np.argmax(sizes)))
        d = cluster.select_cluster(d, km, cid)
    d = d.select([c for c, k in zip(d.columns, d.kinds) if k != dataio.CATEGORICAL])
    out, report = cluster.filter_and_impute(d, p.float("col_na_max", 0.1),
                                            p.float("row_na_max", 0.1))
    ctx.state["glm_data"] = out
    _write_rows(ctx.path("impute/report.csv"), ["item", "kind", "value"],
                [(c, "dropped_column", "") for c in report.dropped_columns]
                + [(i, "dropped_row", "") for i in report.dropped_rows]
                + [(c, "median", report.medians[c]) for c in report.medians]
                + [(c, "imputed", report.imputed_counts[c]) for c in report.imputed_counts])


def stage_lasso(ctx):
    d = ctx.need("glm_data", "lasso", "impute")
    p = ctx.params("lasso")
    path = lasso.fit_path(d, p.int("n_lambdas", 100), p.float("lambda_min_ratio", 1e-3))
    cv = lasso.cross_validate(d, path, p.int("folds", 10), ctx.seed("lasso"))
    model = path.models[cv.best_index]
    ctx.state["lasso_model"] = model
    _write_rows(ctx.path("lasso/path.csv"),
                ["lambda", "log_lambda", "nonzero", "mean_auc", "se_auc"],
                zip(path.lambdas, np.log(path.lambdas), path.nonzero_counts, cv.mean_auc,
                    cv.se_auc))
    _write_rows(ctx.path("lasso/cv_curve.csv"), ["log_lambda", "mean_auc"],
                zip(np.log(path.lambdas), cv.mean_auc))
    _svg(ctx, "lasso/cv_curve.csv", "line", "lasso/cv_curve.svg", "CV AUC vs log lambda")
    lasso.export_coefficients(model, ctx.path("lasso/coefficients.csv"))


def stage_bayes(ctx):
    d = ctx.need("glm_data", "bayes", "impute")
    model = ctx.state.get("lasso_model")
    if model is not None:
        chosen = [n for n, c in zip(model.feature_names, model.coefficients) if c != 0]
        d = d.select(chosen)
    p = ctx.params("bayes")
    spec = bayes.BayesLogisticSpec(n_chains=p.int("chains", 4), n_burnin=p.int("burnin", 1000),
                                   n_samples=p.int("samples", 2000), thin=p.int("thin", 1),
                                   seed=ctx.seed("bayes"))
    s = bayes.sample(d, spec)
    summary = bayes.summarize(s)
    bayes.write_draws_csv(s, ctx.path("bayes/draws.csv"))
    bayes.write_summary_csv(summary, ctx.path("bayes/summary.csv"))
    _write_rows(ctx.path("bayes/trace_b0.csv"), ["iteration", "value", "chain"],
                [(int(it), float(v), c) for c, tr in enumerate(bayes.trace_export(s, "b0"))
                 for it, v in tr])
    _svg(ctx, "bayes/trace_b0.csv", "trace", "bayes/trace_b0.svg", "Trace of b0")
    _write_rows(ctx.path("bayes/density_b0.csv"), ["b0"], ([float(v)] for v in s.draws("b0")))
    _svg(ctx, "bayes/density_b0.csv", "density", "bayes/density_b0.svg", "Posterior of b0")
    _write_rows(ctx.path("bayes/boxplot.csv"), ["parameter", "value"],
                [(name, float(v)) for name in s.names[1:] for v in s.draws(name)[::10]])
    if len(s.names) > 1:
        _svg(ctx, "bayes/boxplot.csv", "boxplot", "bayes/boxplot.svg", "Coefficients")


def stage_stack(ctx):
    train = ctx.state.get("train") or ctx.need("data", "stack", "generate")
    valid = ctx.state.get("valid", train)
    p = ctx.params("stack")
    seed = ctx.seed("stack")
    n_trees = p.int("n_trees", 50)
    configs = stack.default_base_configs(n_trees=n_trees, seed=seed)
    spec = stack.StackSpec(base_configs=configs,
                           base_sample_seeds=list(p.ints("sample_seeds", (0,))),
                           level2=p.str("level2", "glm"), oof_folds=p.int("folds", 5),
                           undersample_ratio=p.float("undersample_ratio", None), seed=seed,
                           bayes_spec=bayes.BayesLogisticSpec(
                               n_samples=p.int("bayes_samples", 1000),
                               n_burnin=p.int("bayes_burnin", 500), seed=seed))
    m = stack.fit_stack(train, spec)
    base_valid = stack.base_probabilities(m, valid)
    stacked = stack.predict_level2(m, base_valid)
    rows = []
    sweeps = []
    for k, name in enumerate(m.base_names):
        rows.append((name, float(m.oof_auc[k]),
                     metrics.auc_score(valid.labels, base_valid[:, k]),
                     float(m.level2_coefficients[k])))
        sweeps.append((name, metrics.mcc_sweep(valid.labels, base_valid[:, k])))
    rows.append(("stack", metrics.auc_score(train.labels, stack.predict_level2(m, m.oof)),
                 metrics.auc_score(valid.labels, stacked), float(m.level2_intercept)))
    sweeps.append(("stack", metrics.mcc_sweep(valid.labels, stacked)))
    _write_rows(ctx.path("stack/auc.csv"),
                ["model", "oof_auc", "validation_auc", "level2_coefficient"], rows)
    _write_rows(ctx.path("stack/mcc_sweep.csv"), ["threshold", "mcc", "model"],
                [(float(t), float(v), name) for name, sw in sweeps
                 for t, v in zip(sw.thresholds, sw.mcc_values)])
    _svg(ctx, "stack/mcc_sweep.csv", "line", "stack/mcc_sweep.svg", "MCC by level-1 model")
    if m.level2_kind == "bayes":
        s = m.level2_model
        _write_rows(ctx.path("stack/level2_draws.csv"), ["parameter", "value"],
                    [(name, float(v)) for name in s.names[1:] for v in s.draws(name)[::5]])
        _svg(ctx, "stack/level2_draws.csv", "boxplot", "stack/level2_boxplot.svg",
             "Level-2 coefficients")


def stage_reliability(ctx):
    p = ctx.params("reliability")
    seed = ctx.seed("reliability")
    n = p.int("n", 1000)
    shape = p.float("shape", 2.0)
    coefs = p.floats("coefficients", (5.0, 1.0, -1.0, 0.5))
    X = np.random.default_rng(derive_seed(seed, 1)).random((n, len(coefs) - 1))
    data = reliability.simulate(reliability.WeibullModel(shape, coefs), X, seed)
    _write_rows(ctx.path("reliability/lifetimes.csv"),
                [f"x{j + 1}" for j in range(X.shape[1])] + ["lifetime"],
                (list(map(float, x)) + [float(t)] for x, t in zip(X, data.lifetimes)))
    _write_rows(ctx.path("reliability/lifetime_hist.csv"), ["lifetime"],
                ([float(t)] for t in data.lifetimes))
    _svg(ctx, "reliability/lifetime_hist.csv", "density", "reliability/lifetimes.svg",
         "Simulated lifetimes")
    spec = bayes.BayesLogisticSpec(n_chains=p.int("chains", 4), n_burnin=p.int("burnin", 1000),
                                   n_samples=p.int("samples", 2000), seed=seed)
    s = reliability.fit_bayes(data, spec)
    bayes.write_summary_csv(bayes.summarize(s), ctx.path("reliability/summary.csv"))
    _write_rows(ctx.path("reliability/shape_draws.csv"), ["shape"],
                ([float(v)] for v in s.draws("shape")))
    _svg(ctx, "reliability/shape_draws.csv", "density", "reliability/shape_density.svg",
         "Posterior of the Weibull shape")
    x0 = np.full(X.shape[1], 0.5)
    qrows = []
    for q in (0.1, 0.5, 0.9):
        value, excluded = reliability.lifetime_predictive(s, x0, q)
        qrows.append((q, value, excluded))
    _write_rows(ctx.path("reliability/quantiles.csv"), ["q", "lifetime", "excluded_draws"],
                qrows)


STAGE_FUNCS = {name: globals()[f"stage_{name}"] for name in STAGES}


def _hash_files(paths, root):
    h = _FNV_OFFSET
    for path in sorted(set(paths)):
        h = fnv1a64(os.path.relpath(path, root).encode(), h)
        with open(path, "rb") as fh:
            h = fnv1a64(fh.read(), h)
    return h


def run(config):
    """Execute the configured stages; returns the output directory.

    A manifest (``manifest.csv``) is always written. When a stage fails the
    manifest records it and every later stage as not run, and
    :class:`StageError` is raised.
    """
    if isinstance(config, (str, os.PathLike)):
        config = ExperimentConfig.from_file(config)
    os.makedirs(config.output, exist_ok=True)
    ctx = _Context(config)
    records = []
    upstream = fnv1a64(str(config.seed).encode())
    failure = None
    for stage in config.stages:
        if failure is not None:
            records.append((stage, "skipped", "", "", "", ""))
            continue
        inputs = fnv1a64(config.section_text(stage).encode(), upstream)
        start = len(ctx.written)
        t0 = time.perf_counter()
        try:
            STAGE_FUNCS[stage](ctx)
        except Exception as exc:
            failure = (stage, exc)
            log.error("stage %s failed: %s", stage, exc)
            records.append((stage, "failed", f"{inputs:016x}", "",
                            f"{time.perf_counter() - t0:.3f}", f"{type(exc).__name__}: {exc}"))
            continue
        outputs = _hash_files(ctx.written[start:], ctx.root)
        upstream = fnv1a64(f"{outputs:016x}".encode(), inputs)
        records.append((stage, "ok", f"{inputs:016x}", f"{outputs:016x}",
                        f"{time.perf_counter() - t0:.3f}", ""))
        log.info("stage %s done", stage)
    manifest = os.path.join(ctx.root, "manifest.csv")
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "status", "inputs_hash", "outputs_hash", "wall_time_s", "error"])
        w.writerows(records)
    if failure is not None:
        stage, exc = failure
        raise StageError(f"stage '{stage}' failed: {type(exc).__name__}: {exc}") from exc
    return ctx.root


def read_manifest(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
