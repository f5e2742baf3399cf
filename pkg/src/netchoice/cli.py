"""Command-line front end.

Verbs: synth, ingest, extract, fit, emfit, experiment, lrtest, accuracy.
Every artifact embeds a hash of the command configuration and the seed, and
reruns with the same inputs produce byte-identical files.

Exit codes: 0 ok, 2 data error, 3 non-convergence, 4 bad configuration.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .clogit import FitError, fit, fit_nonparametric_pa
from .evalstats import EvalError, holdout_accuracy, lr_test
from .experiments import EXPERIMENTS, run as run_experiment
from .features import ChoiceData, EventFilter, FeatureError, FeatureSpec, extract_choices
from .generators import MODELS, ConfigError, GrowthConfig, generate, manifest, replica_seeds
from .graph import GraphError, parse_time, read_edgelist, write_edgelist, write_nodes
from .mixlogit import (
    MixtureError, Mode, MixtureModel, em_fit, fit_copy, fit_local_search, fit_rp,
)

EXIT_OK, EXIT_DATA, EXIT_NOCONV, EXIT_CONFIG = 0, 2, 3, 4

log = logging.getLogger("netchoice")


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------
# output helpers


def config_of(args):
    skip = {"func", "out", "threads", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


class Output:
    def __init__(self, args):
        self.dir = args.out
        os.makedirs(self.dir, exist_ok=True)
        self.config = config_of(args)
        self.hash = config_hash(self.config)
        self.seed = args.seed
        self.files = []

    def path(self, name):
        return os.path.join(self.dir, name)

    def stamp(self):
        return {"config": self.config, "config_hash": self.hash, "seed": self.seed,
                "version": __version__}

    def json(self, name, payload):
        text = json.dumps({**self.stamp(), **payload}, indent=2, sort_keys=True,
                          default=_json_default) + "\n"
        self._write(name, text)

    def csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write(f"# config_hash: {self.hash} seed: {self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
        self._write(name, buf.getvalue())

    def text(self, name, text):
        self._write(name, text)

    def _write(self, name, text):
        with open(self.path(name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.files.append(name)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# ----------------------------------------------------------------------
# commands


def _growth_config(args, n=None, seed=None):
    theta_k = tuple(float(x) for x in args.theta_k.split(",")) if args.theta_k else ()
    return GrowthConfig(
        n=n if n is not None else int(round(args.n * args.scale)),
        m=args.m, model=args.model, alpha=args.alpha, theta_k=theta_k, p=args.p, r=args.r,
        h=args.h, n_groups=args.groups, c=args.c, fitness_scale=args.fitness_scale,
        directed=args.directed, seed=args.seed if seed is None else seed,
    ).validate()


def cmd_synth(args):
    out = Output(args)
    base = _growth_config(args)
    seeds = [args.seed] if args.replicas == 1 else replica_seeds(args.seed, args.replicas)
    manifests = []
    for k, s in enumerate(seeds):
        cfg = _growth_config(args, n=base.n, seed=s)
        g, stats = generate(cfg)
        suffix = "" if args.replicas == 1 else f"_{k:03d}"
        buf = io.StringIO()
        write_edgelist(g, buf, header=[f"config_hash: {out.hash}", f"seed: {s}"])
        out.text(f"edges{suffix}.csv", buf.getvalue())
        write_nodes(g, out.path(f"nodes{suffix}.csv"))
        man = manifest(cfg, g, stats)
        man["files"] = [f"edges{suffix}.csv", f"nodes{suffix}.csv"]
        manifests.append(man)
    out.json("manifest.json", {"graphs": manifests})
    print(f"wrote {len(seeds)} graph(s) with {manifests[0]['edges']} edges to {out.dir}")
    return EXIT_OK


def _load_graph(args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        g, symbols, report = read_edgelist(args.edges, directed=args.graph_directed,
                                           delimiter=args.delimiter, nodes_path=args.nodes,
                                           strict=getattr(args, "strict", False))
    for w in caught:
        log.warning("%s", w.message)
    if g.n_edges == 0:
        raise GraphError(f"{args.edges}: no edges")
    return g, symbols, report


def cmd_ingest(args):
    out = Output(args)
    g, symbols, report = _load_graph(args)
    buf = io.StringIO()
    write_edgelist(g, buf, symbols=symbols, header=[f"config_hash: {out.hash}"])
    out.text("edges.csv", buf.getvalue())
    write_nodes(g, out.path("nodes.csv"), symbols=symbols)
    stamps = [t for t in g.timestamp if t is not None]
    out.json("summary.json", {
        "nodes": g.n_nodes, "edges": g.n_edges, "directed": g.directed,
        "lines": report.n_lines, "bad_lines": len(report.bad_lines),
        "bad_line_numbers": report.bad_lines[:100],
        "duplicates_dropped": report.duplicates, "self_loops_dropped": report.self_loops,
        "resorted": report.resorted,
        "first_timestamp": min(stamps) if stamps else None,
        "last_timestamp": max(stamps) if stamps else None,
    })
    print(f"{g.n_nodes} nodes, {g.n_edges} edges, {report.duplicates} duplicates dropped, "
          f"{len(report.bad_lines)} bad lines")
    return EXIT_OK


def _spec(text):
    try:
        return FeatureSpec.parse(text)
    except FeatureError as exc:
        raise UsageError(str(exc)) from None


def _filters(args, g):
    min_event = args.min_event
    if min_event is None:
        min_event = g.meta.get("bootstrap_edges", 0)
    try:
        start = None if args.start is None else parse_time(args.start)
        end = None if args.end is None else parse_time(args.end)
    except ValueError as exc:
        raise UsageError(f"bad date: {exc}") from None
    return EventFilter(min_event=min_event, start=start, end=end, keep_prob=args.keep_prob,
                       max_events=args.max_events, exclude_first_seen=args.exclude_first_seen,
                       require_fof=args.require_fof, seed=args.seed)


def _extract(args, features):
    spec = _spec(features)
    g, _, _ = _load_graph(args)
    return extract_choices(g, spec, choice_set=args.choice_set, filters=_filters(args, g),
                           neg_samples=args.neg_samples, seed=args.seed)


def cmd_extract(args):
    out = Output(args)
    data = _extract(args, args.features)
    data.meta.update({"config_hash": out.hash, "seed": out.seed})
    buf = io.StringIO()
    data.to_jsonl(buf)
    out.text("choices.jsonl", buf.getvalue())
    print(f"{data.n_events} events, {data.X.shape[0]} rows, features {list(data.names)}")
    return EXIT_OK


def _load_choices(args, default_features):
    if args.choices:
        return ChoiceData.from_jsonl(args.choices)
    if args.edges:
        return _extract(args, args.features or default_features)
    raise UsageError("give --choices FILE or --edges FILE")


def cmd_fit(args):
    out = Output(args)
    if args.nonparametric is not None:
        data = _load_choices(args, "deg")
        npf = fit_nonparametric_pa(data, args.nonparametric, degree_col=args.degree_column)
        out.json("fit.json", {
            "model": "nonparametric", "loglik": npf.loglik, "converged": npf.converged,
            "n_events": npf.n_events, "levels": npf.table(),
            "param_names": [f"deg_{k}" for k in npf.levels if k not in npf.missing and k != npf.pinned],
        })
        out.csv("kernel.csv", ["degree", "estimate", "se", "exposures", "choices", "status"],
                [(r["degree"], "" if r["estimate"] is None else r["estimate"],
                  "" if r["se"] is None else r["se"], r["exposures"], r["choices"], r["status"])
                 for r in npf.table()])
        return EXIT_OK if npf.converged else EXIT_NOCONV
    data = _load_choices(args, "logdeg")
    names = args.use.split(",") if args.use else None
    try:
        res = fit(data, names, method=args.method, ridge=args.ridge, max_iter=args.max_iter,
                  threads=args.threads)
    except FeatureError as exc:
        raise UsageError(str(exc)) from None
    out.json("fit.json", {"model": "conditional-logit", "param_names": list(res.names),
                          **res.to_dict()})
    out.csv("coef.csv", ["name", "estimate", "se", "z"],
            [(r["name"], r["estimate"], "" if r["se"] is None else r["se"],
              "" if r["z"] is None else r["z"]) for r in res.coef_table()])
    for r in res.coef_table():
        se = "nan" if r["se"] is None else f"{r['se']:.4f}"
        print(f"{r['name']:>24s} {r['estimate']: .4f} ({se})")
    print(f"loglik {res.loglik:.4f}  events {res.n_events}  converged {res.converged}")
    if not res.converged:
        print(f"not converged: {res.message}", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def cmd_emfit(args):
    out = Output(args)
    data = _load_choices(args, "logdeg,hasdeg,fof")
    if args.model in ("copy", "local-search"):
        prof = fit_copy(data) if args.model == "copy" else fit_local_search(data)
        out.json("emfit.json", {"model": args.model, "param_names": prof.param_names,
                                "n_events": data.n_events, **prof.to_dict()})
        out.csv("profile.csv", ["class_prob", "loglik"], list(zip(prof.grid, prof.profile)))
        print(f"{args.model}: {prof.name} = {prof.estimate:.4f}, loglik {prof.loglik:.4f}")
        return EXIT_OK
    if args.model in ("rp", "rp4"):
        res = fit_rp(data, four_modes=args.model == "rp4", n_starts=args.starts, seed=args.seed)
    elif args.model == "pa-uniform":
        model = MixtureModel([Mode("pa", ("log_degree",)), Mode("uniform", ())])
        res = em_fit(data, model, n_starts=args.starts, seed=args.seed, max_iter=args.max_iter)
    else:
        raise UsageError(f"unknown mixture model {args.model!r}")
    out.json("emfit.json", {"model": args.model, "param_names": res.model.param_names(),
                            **res.to_dict()})
    out.csv("em_path.csv", ["iter", "loglik"] + [f"pi[{m.name}]" for m in res.model.modes],
            [(t["iter"], t["loglik"], *t["pi"]) for t in res.trajectory])
    print(f"{args.model}: pi = {np.round(res.pi, 4).tolist()}, loglik {res.loglik:.4f}")
    return EXIT_OK if res.converged else EXIT_NOCONV


def cmd_experiment(args):
    out = Output(args)
    kw = {}
    if args.name == "gamma-grid":
        kw = {"ks_scan": args.ks_scan}
        if args.replicas is not None:
            kw["replicas"] = args.replicas
    elif args.name == "surface" and args.starts is not None:
        kw = {"n_starts": args.starts}
    try:
        res = run_experiment(args.name, seed=args.seed, scale=args.scale, threads=args.threads,
                             **kw)
    except KeyError as exc:
        raise UsageError(str(exc)) from None
    for name, (header, rows) in res.tables.items():
        out.csv(f"{name}.csv", header, rows)
    out.json("manifest.json", {"experiment": args.name, "summary": res.summary,
                               "tables": [f"{n}.csv" for n in res.tables]})
    print(f"experiment {args.name}: wrote {', '.join(out.files)} to {out.dir}")
    return EXIT_OK


def _read_fit(path):
    with open(path, encoding="utf-8") as fh:
        rec = json.load(fh)
    if "loglik" not in rec or "param_names" not in rec:
        raise GraphError(f"{path}: not a fit report")
    return rec


def cmd_lrtest(args):
    out = Output(args)
    null, alt = _read_fit(args.null), _read_fit(args.alt)
    res = lr_test((null["loglik"], null["param_names"]), (alt["loglik"], alt["param_names"]),
                  k=args.df)
    out.json("lrtest.json", res.to_dict())
    print(f"-2 log lambda = {res.statistic:.4f}, df = {res.df}, p = {res.pvalue:.4g}")
    return EXIT_OK


def cmd_accuracy(args):
    out = Output(args)
    rec = _read_fit(args.fit)
    if "coefficients" not in rec:
        raise UsageError("accuracy needs a conditional-logit fit report")
    names = [c["name"] for c in rec["coefficients"]]
    coef = np.array([c["estimate"] for c in rec["coefficients"]])
    data = ChoiceData.from_jsonl(args.choices)
    try:
        data = data.select(names)
    except FeatureError as exc:
        raise UsageError(str(exc)) from None
    acc = holdout_accuracy(coef, data)
    chance = float(np.mean(1.0 / data.sizes))
    out.json("accuracy.json", {"accuracy": acc, "chance": chance, "n_events": data.n_events})
    print(f"accuracy {acc:.4f} over {data.n_events} events (chance {chance:.4f})")
    return EXIT_OK


# ----------------------------------------------------------------------
# parser


def _global_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--threads", type=int, default=1, help="worker threads/processes")
    g.add_argument("--scale", type=float, default=1.0,
                   help="shrink node and replica counts by this factor")
    g.add_argument("--out", default=".", help="output directory (default: current)")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def _graph_parent():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--nodes", help="node sidecar CSV (node,arrival[,group][,fitness][,...])")
    p.add_argument("--delimiter", default=",")
    d = p.add_mutually_exclusive_group()
    d.add_argument("--directed", dest="graph_directed", action="store_const", const=True)
    d.add_argument("--undirected", dest="graph_directed", action="store_const", const=False)
    p.set_defaults(graph_directed=None)
    return p


def _extract_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("choice extraction")
    g.add_argument("--choice-set", choices=("all", "fof"), default="all")
    g.add_argument("--neg-samples", type=int, default=None, metavar="S")
    g.add_argument("--min-event", type=int, default=None,
                   help="skip edges before this index (default: generator bootstrap)")
    g.add_argument("--start", help="first timestamp (ISO-8601 or seconds)")
    g.add_argument("--end", help="end timestamp, exclusive")
    g.add_argument("--keep-prob", type=float, default=None)
    g.add_argument("--max-events", type=int, default=None)
    g.add_argument("--exclude-first-seen", choices=("none", "edge", "day"), default="none")
    g.add_argument("--require-fof", action="store_true")
    return p


def build_parser():
    glob, graph, extract = _global_parent(), _graph_parent(), _extract_parent()
    parser = argparse.ArgumentParser(
        prog="netchoice", description="Network growth as discrete choice.")
    parser.add_argument("--version", action="version", version=f"netchoice {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[glob], help="generate synthetic growth graphs")
    s.add_argument("--model", choices=MODELS, default="pa")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--theta-k", default="", help="comma-separated per-degree utilities")
    s.add_argument("--p", type=float, default=1.0)
    s.add_argument("--r", type=float, default=1.0)
    s.add_argument("--h", type=float, default=1.0)
    s.add_argument("--groups", type=int, default=2)
    s.add_argument("--c", type=float, default=2.0)
    s.add_argument("--fitness-scale", type=float, default=1.0)
    s.add_argument("--directed", action="store_true")
    s.add_argument("--replicas", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", parents=[glob, graph], help="validate and canonicalize an edge list")
    s.add_argument("edges")
    s.add_argument("--strict", action="store_true", help="fail on the first bad line")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("extract", parents=[glob, graph, extract], help="edge list to choice data")
    s.add_argument("edges")
    s.add_argument("--features", default="logdeg,hasdeg")
    s.set_defaults(func=cmd_extract)

    for name, helptext, func in (("fit", "fit a conditional logit", cmd_fit),
                                 ("emfit", "fit a mixed logit by EM", cmd_emfit)):
        s = sub.add_parser(name, parents=[glob, graph, extract], help=helptext)
        src = s.add_mutually_exclusive_group()
        src.add_argument("--choices", help="choice data (JSON lines)")
        src.add_argument("--edges", help="edge list to extract from")
        s.add_argument("--features", default=None, help="extraction spec when using --edges")
        s.add_argument("--max-iter", type=int, default=500 if name == "fit" else 1000)
        s.set_defaults(func=func)
        if name == "fit":
            s.add_argument("--use", help="comma-separated feature columns to fit")
            s.add_argument("--method", choices=("newton", "bfgs"), default="newton")
            s.add_argument("--ridge", type=float, default=0.0)
            s.add_argument("--nonparametric", type=int, default=None, metavar="MAX_DEGREE")
            s.add_argument("--degree-column", default="degree")
        else:
            s.add_argument("--model", default="copy",
                           choices=("copy", "local-search", "rp", "rp4", "pa-uniform"))
            s.add_argument("--starts", type=int, default=5)

    s = sub.add_parser("experiment", parents=[glob], help="figure-data experiments")
    s.add_argument("name", choices=EXPERIMENTS)
    s.add_argument("--replicas", type=int, default=None)
    s.add_argument("--ks-scan", action="store_true", help="choose x_min by KS distance")
    s.add_argument("--starts", type=int, default=None)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("lrtest", parents=[glob], help="likelihood-ratio test of two fit reports")
    s.add_argument("--null", required=True)
    s.add_argument("--alt", required=True)
    s.add_argument("--df", type=int, default=None)
    s.set_defaults(func=cmd_lrtest)

    s = sub.add_parser("accuracy", parents=[glob], help="held-out accuracy of a fit")
    s.add_argument("--fit", required=True)
    s.add_argument("--choices", required=True)
    s.set_defaults(func=cmd_accuracy)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraphError, FeatureError, FitError, MixtureError, EvalError, OSError,
            json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
