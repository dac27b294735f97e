"""Command-line entry point: ``failfoundry <command> ...``.

Exit code 0 on success. On failure a single line ``error: <Kind>: <message>``
is written to stderr and the exit code is nonzero.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import bayes, cluster, dataio, gbt, lasso, metrics, pipeline, plotting, reliability, stack


def _load(args):
    schema = dataio.read_schema(args.schema) if getattr(args, "schema", None) else None
    d = dataio.load_csv(args.input, schema)
    cats = [c for c, k in zip(d.columns, d.kinds) if k == dataio.CATEGORICAL]
    if cats and getattr(args, "encode", True):
        d = dataio.one_hot(d, cats)
    return d


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _write(path, header, rows):
    pipeline._write_rows(path, header, rows)


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


# -- commands -----------------------------------------------------------------

def cmd_run(args):
    out = pipeline.run(args.config)
    print(os.path.join(out, "manifest.csv"))


def cmd_plot(args):
    plotting.plot(args.input, args.kind, args.out, args.title or "")


def cmd_data(args):
    d = _load(argparse.Namespace(input=args.input, schema=args.schema, encode=False))
    if args.date_columns:
        d = dataio.add_time_on_line(d, args.date_columns.split(","))
    if args.one_hot:
        d = dataio.one_hot(d, [c for c, k in zip(d.columns, d.kinds) if k == dataio.CATEGORICAL])
    if args.undersample_ratio is not None:
        d = dataio.undersample(d, args.undersample_ratio, args.seed)
    dataio.save_csv(d, args.output)


def cmd_synth(args):
    spec = dataio.SyntheticSpec(n_rows=args.rows, n_features=args.features,
                                positive_rate=args.positive_rate,
                                coefficients=tuple(_floats(args.coefficients)),
                                n_part_types=args.part_types, n_shared=args.shared,
                                n_date_columns=args.date_columns,
                                n_categorical_columns=args.categorical_columns, seed=args.seed)
    d = dataio.make_synthetic(spec)
    dataio.save_csv(d, args.output)
    if args.schema_out:
        dataio.save_schema(d, args.schema_out)


def _read_scores(path):
    labels, probs = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for r in reader:
            labels.append(int(r["label"]))
            probs.append(float(r["prob"]))
    return np.array(labels), np.array(probs)


def cmd_metrics(args):
    labels, probs = _read_scores(args.input)
    out = _outdir(args.out_dir)
    roc = metrics.roc_auc(labels, probs)
    sweep = metrics.mcc_sweep(labels, probs, args.grid_step)
    _write(os.path.join(out, "roc.csv"), ["fpr", "tpr"], zip(roc.fpr, roc.tpr))
    _write(os.path.join(out, "mcc_sweep.csv"), ["threshold", "mcc"],
           zip(sweep.thresholds, sweep.mcc_values))
    if args.svg:
        plotting.plot(os.path.join(out, "roc.csv"), "roc", os.path.join(out, "roc.svg"))
        plotting.plot(os.path.join(out, "mcc_sweep.csv"), "line",
                      os.path.join(out, "mcc_sweep.svg"))
    print(f"auc={roc.auc:.6f} best_threshold={sweep.best_threshold:g} "
          f"best_mcc={sweep.best_mcc:.6f}")


def cmd_gbt_fit(args):
    d = _load(args)
    if args.undersample_ratio is not None:
        d = dataio.undersample(d, args.undersample_ratio, args.seed)
    params = gbt.GbtParams(n_trees=args.n_trees, max_depth=args.max_depth,
                           learning_rate=args.learning_rate,
                           colsample_bytree=args.colsample_bytree,
                           min_child_weight=args.min_child_weight, l2_reg=args.l2_reg,
                           seed=args.seed)
    gbt.save(gbt.fit(d, params), args.model)


def cmd_gbt_predict(args):
    m = gbt.load(args.model)
    d = _load(args)
    probs = gbt.predict_proba(m, d)
    rows = [(int(i), "" if d.labels is None else int(y), float(p))
            for i, y, p in zip(d.ids, d.labels if d.labels is not None else d.ids, probs)]
    _write(args.output, ["Id", "label", "prob"], rows)


def cmd_gbt_importance(args):
    m = gbt.load(args.model)
    fi = gbt.importance(m)
    top = gbt.top_k_features(fi, args.top_k)
    rows = [(m.feature_names[j], float(fi.gains[j])) for j in top]
    if args.output:
        _write(args.output, ["feature", "gain"], rows)
    else:
        for name, g in rows:
            print(f"{name},{g!r}")


def cmd_lasso_fit(args):
    d = _load(args)
    out = _outdir(args.out_dir)
    path = lasso.fit_path(d, args.n_lambdas, args.lambda_min_ratio)
    cv = lasso.cross_validate(d, path, args.folds, args.seed)
    _write(os.path.join(out, "path.csv"), ["lambda", "nonzero", "mean_auc", "se_auc"],
           zip(path.lambdas, path.nonzero_counts, cv.mean_auc, cv.se_auc))
    lasso.export_coefficients(path.models[cv.best_index], os.path.join(out, "coefficients.csv"))
    print(f"lambda_best={cv.lambda_best:.6g} mean_auc={cv.mean_auc[cv.best_index]:.6f}")


def _mask_input(args):
    d = _load(argparse.Namespace(input=args.input, schema=args.schema, encode=False))
    return d, d.mask.astype(np.float64)


def cmd_cluster_kmeans(args):
    d, mask = _mask_input(args)
    r = cluster.kmeans(mask, args.k, args.seed, args.max_iter)
    _write(args.output, ["Id", "cluster"], zip((int(i) for i in d.ids),
                                               (int(a) for a in r.assignments)))
    print(f"wcss={r.wcss!r} iterations={r.iterations}")


def cmd_cluster_elbow(args):
    _, mask = _mask_input(args)
    lo, hi = (int(v) for v in args.k_range.split(":"))
    curve = cluster.elbow(mask, range(lo, hi + 1), args.seed, args.restarts)
    _write(args.output, ["k", "wcss"], curve)


def cmd_bayes_fit(args):
    d = _load(args)
    if d.n_rows and np.isnan(d.X).any():
        d, _ = cluster.filter_and_impute(d, 1.0, 1.0)
    out = _outdir(args.out_dir)
    spec = bayes.BayesLogisticSpec(n_chains=args.chains, n_burnin=args.burnin,
                                   n_samples=args.samples, thin=args.thin, seed=args.seed)
    s = bayes.sample(d, spec)
    bayes.write_draws_csv(s, os.path.join(out, "draws.csv"))
    bayes.write_summary_csv(bayes.summarize(s), os.path.join(out, "summary.csv"))


def cmd_stack_fit(args):
    d = _load(args)
    out = _outdir(args.out_dir)
    spec = stack.StackSpec(base_configs=stack.default_base_configs(n_trees=args.n_trees,
                                                                 seed=args.seed),
                           base_sample_seeds=[int(s) for s in args.sample_seeds.split(",")],
                           level2=args.level2, oof_folds=args.folds,
                           undersample_ratio=args.undersample_ratio, seed=args.seed)
    m = stack.fit_stack(d, spec)
    stacked = stack.predict_level2(m, m.oof)
    _write(os.path.join(out, "oof_auc.csv"), ["model", "oof_auc"],
           list(zip(m.base_names, m.oof_auc))
           + [("stack_in_sample", metrics.auc_score(d.labels, stacked))])
    rows = []
    for k, name in enumerate(m.base_names):
        sw = metrics.mcc_sweep(d.labels, m.oof[:, k])
        rows.extend((float(t), float(v), name) for t, v in zip(sw.thresholds, sw.mcc_values))
    _write(os.path.join(out, "mcc_sweep.csv"), ["threshold", "mcc", "model"], rows)
    _write(os.path.join(out, "level2.csv"), ["term", "coefficient"],
           [("(Intercept)", m.level2_intercept)]
           + list(zip(m.base_names, map(float, m.level2_coefficients))))


def cmd_rel_simulate(args):
    b = _floats(args.coefficients)
    X = np.random.default_rng(args.seed + 1).random((args.n, len(b) - 1))
    data = reliability.simulate(reliability.WeibullModel(args.shape, b), X, args.seed)
    _write(args.output, [f"x{j + 1}" for j in range(X.shape[1])] + ["lifetime"],
           (list(map(float, x)) + [float(t)] for x, t in zip(X, data.lifetimes)))


def _read_lifetimes(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader if r]
    if header[-1] != "lifetime":
        raise ValueError("last column must be 'lifetime'")
    arr = np.array(rows).reshape(-1, len(header))
    return reliability.LifetimeData(arr[:, :-1], arr[:, -1])


def cmd_rel_fit(args):
    data = _read_lifetimes(args.input)
    out = _outdir(args.out_dir)
    spec = bayes.BayesLogisticSpec(n_chains=args.chains, n_burnin=args.burnin,
                                   n_samples=args.samples, seed=args.seed)
    s = reliability.fit_bayes(data, spec)
    bayes.write_draws_csv(s, os.path.join(out, "draws.csv"))
    bayes.write_summary_csv(bayes.summarize(s), os.path.join(out, "summary.csv"))


def cmd_rel_quantile(args):
    s = bayes.read_draws_csv(args.draws)
    value, excluded = reliability.lifetime_predictive(s, _floats(args.x), args.q)
    print(f"{value!r} excluded={excluded}")


# -- parser -------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="failfoundry",
                                description="Failure-detection modeling toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="render a CSV as SVG")
    pl.add_argument("--kind", required=True, choices=plotting.KINDS)
    pl.add_argument("--in", dest="input", required=True)
    pl.add_argument("--out", required=True)
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)

    da = sub.add_parser("data", help="load, engineer and undersample a CSV")
    da.add_argument("--input", required=True)
    da.add_argument("--schema")
    da.add_argument("--undersample-ratio", type=float)
    da.add_argument("--seed", type=int, default=0)
    da.add_argument("--date-columns")
    da.add_argument("--one-hot", action="store_true")
    da.add_argument("--output", required=True)
    da.set_defaults(func=cmd_data)

    sy = sub.add_parser("synth", help="write a synthetic dataset")
    sy.add_argument("--rows", type=int, default=1000)
    sy.add_argument("--features", type=int, default=10)
    sy.add_argument("--positive-rate", type=float, default=0.05)
    sy.add_argument("--coefficients", default="")
    sy.add_argument("--part-types", type=int, default=1)
    sy.add_argument("--shared", type=int)
    sy.add_argument("--date-columns", type=int, default=0)
    sy.add_argument("--categorical-columns", type=int, default=0)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--output", required=True)
    sy.add_argument("--schema-out")
    sy.set_defaults(func=cmd_synth)

    me = sub.add_parser("metrics", help="ROC and MCC sweep from label,prob CSV")
    me.add_argument("--input", required=True)
    me.add_argument("--grid-step", type=float, default=0.01)
    me.add_argument("--out-dir", required=True)
    me.add_argument("--svg", action="store_true")
    me.set_defaults(func=cmd_metrics)

    g = sub.add_parser("gbt", help="gradient-boosted trees")
    gs = g.add_subparsers(dest="action", required=True)
    gf = gs.add_parser("fit")
    gf.add_argument("--input", required=True)
    gf.add_argument("--schema")
    gf.add_argument("--model", required=True)
    gf.add_argument("--n-trees", type=int, default=100)
    gf.add_argument("--max-depth", type=int, default=6)
    gf.add_argument("--learning-rate", type=float, default=0.1)
    gf.add_argument("--colsample-bytree", type=float, default=1.0)
    gf.add_argument("--min-child-weight", type=float, default=1.0)
    gf.add_argument("--l2-reg", type=float, default=1.0)
    gf.add_argument("--undersample-ratio", type=float)
    gf.add_argument("--seed", type=int, default=0)
    gf.set_defaults(func=cmd_gbt_fit)
    gp = gs.add_parser("predict")
    gp.add_argument("--model", required=True)
    gp.add_argument("--input", required=True)
    gp.add_argument("--schema")
    gp.add_argument("--output", required=True)
    gp.set_defaults(func=cmd_gbt_predict)
    gi = gs.add_parser("importance")
    gi.add_argument("--model", required=True)
    gi.add_argument("--top-k", type=int, default=500)
    gi.add_argument("--output")
    gi.set_defaults(func=cmd_gbt_importance)

    la = sub.add_parser("lasso", help="LASSO logistic regression")
    ls = la.add_subparsers(dest="action", required=True)
    lf = ls.add_parser("fit")
    lf.add_argument("--input", required=True)
    lf.add_argument("--schema")
    lf.add_argument("--folds", type=int, default=10)
    lf.add_argument("--n-lambdas", type=int, default=100)
    lf.add_argument("--lambda-min-ratio", type=float, default=1e-3)
    lf.add_argument("--seed", type=int, default=0)
    lf.add_argument("--out-dir", required=True)
    lf.set_defaults(func=cmd_lasso_fit)

    cl = sub.add_parser("cluster", help="k-means on the missingness mask")
    cs = cl.add_subparsers(dest="action", required=True)
    ck = cs.add_parser("kmeans")
    ck.add_argument("--input", required=True)
    ck.add_argument("--schema")
    ck.add_argument("--k", type=int, default=25)
    ck.add_argument("--seed", type=int, default=0)
    ck.add_argument("--max-iter", type=int, default=300)
    ck.add_argument("--output", required=True)
    ck.set_defaults(func=cmd_cluster_kmeans)
    ce = cs.add_parser("elbow")
    ce.add_argument("--input", required=True)
    ce.add_argument("--schema")
    ce.add_argument("--k-range", default="1:40")
    ce.add_argument("--restarts", type=int, default=5)
    ce.add_argument("--seed", type=int, default=0)
    ce.add_argument("--output", required=True)
    ce.set_defaults(func=cmd_cluster_elbow)

    ba = sub.add_parser("bayes", help="Bayesian logistic regression")
    bs = ba.add_subparsers(dest="action", required=True)
    bf = bs.add_parser("fit")
    bf.add_argument("--input", required=True)
    bf.add_argument("--schema")
    bf.add_argument("--chains", type=int, default=4)
    bf.add_argument("--burnin", type=int, default=1000)
    bf.add_argument("--samples", type=int, default=5000)
    bf.add_argument("--thin", type=int, default=1)
    bf.add_argument("--seed", type=int, default=0)
    bf.add_argument("--out-dir", required=True)
    bf.set_defaults(func=cmd_bayes_fit)

    st = sub.add_parser("stack", help="two-level stacking")
    ss = st.add_subparsers(dest="action", required=True)
    sf = ss.add_parser("fit")
    sf.add_argument("--input", required=True)
    sf.add_argument("--schema")
    sf.add_argument("--level2", choices=("glm", "bayes"), default="glm")
    sf.add_argument("--folds", type=int, default=5)
    sf.add_argument("--n-trees", type=int, default=50)
    sf.add_argument("--sample-seeds", default="0")
    sf.add_argument("--undersample-ratio", type=float)
    sf.add_argument("--seed", type=int, default=0)
    sf.add_argument("--out-dir", required=True)
    sf.set_defaults(func=cmd_stack_fit)

    re_ = sub.add_parser("reliability", help="Weibull lifetime modeling")
    rs = re_.add_subparsers(dest="action", required=True)
    rsim = rs.add_parser("simulate")
    rsim.add_argument("--n", type=int, default=1000)
    rsim.add_argument("--shape", type=float, default=2.0)
    rsim.add_argument("--coefficients", default="5,1,-1,0.5")
    rsim.add_argument("--seed", type=int, default=0)
    rsim.add_argument("--output", required=True)
    rsim.set_defaults(func=cmd_rel_simulate)
    rfit = rs.add_parser("fit")
    rfit.add_argument("--input", required=True)
    rfit.add_argument("--chains", type=int, default=4)
    rfit.add_argument("--burnin", type=int, default=1000)
    rfit.add_argument("--samples", type=int, default=5000)
    rfit.add_argument("--seed", type=int, default=0)
    rfit.add_argument("--out-dir", required=True)
    rfit.set_defaults(func=cmd_rel_fit)
    rq = rs.add_parser("quantile")
    rq.add_argument("--draws", required=True)
    rq.add_argument("--x", required=True, help="comma-separated covariates")
    rq.add_argument("--q", type=float, default=0.5)
    rq.set_defaults(func=cmd_rel_quantile)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as one machine-readable line
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2 if isinstance(exc, (pipeline.ConfigError, dataio.ConfigError)) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
