"""Command-line entry point: ``riemts <subcommand> [options]``.

Subcommands::

    gen-synthetic      block-state dataset for one realization
    gen-wilson-cowan   Wilson-Cowan dataset for one realization
    extract            dataset -> feature sequence for one variant
    cluster            feature sequence -> labels per method (+ accuracy)
    evaluate           cluster outputs -> result table
    pipeline           everything, all realizations, result table
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .clustering import METHODS, clustering_accuracy
from .errors import ConfigurationError
from .features import FeatureSequence
from .harness import (CONFIG_SCHEMA_VERSION, OUT_ENV, VARIANTS, Dataset, ExperimentConfig,
                      ResultTable, cluster_features, emit_results, extract_features,
                      generate_dataset, run_pipeline)


def _default_out(name):
    return os.path.join(os.environ.get(OUT_ENV, "."), name)


def _load_config(args, kind=None):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    d = cfg.to_dict()
    if kind is not None and d["generator"].get("kind") != kind:
        d["generator"] = {"kind": kind}
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "method", None):
        d["methods"] = args.method
    if getattr(args, "variant", None):
        d["variants"] = args.variant
    return ExperimentConfig.from_dict(d)


def _cmd_generate(args, kind):
    cfg = _load_config(args, kind)
    data, _ = generate_dataset(cfg, args.realization)
    out = args.out or _default_out("dataset")
    data.save(out)
    print(f"wrote {len(data.segments)} segment(s) to {out}")


def _cmd_extract(args):
    cfg = _load_config(args)
    data = Dataset.load(args.input)
    variants = args.variant or cfg.variants
    out = args.out or _default_out("features")
    for v in variants:
        seq = extract_features(data, cfg, v)
        target = os.path.join(out, v) if len(variants) > 1 else out
        seq.save(target)
        print(f"wrote {len(seq)} {seq.manifold_tag} points to {target}")


def _cmd_cluster(args):
    cfg = _load_config(args)
    seq = FeatureSequence.load(args.input)
    methods = args.method or cfg.methods
    seed = args.cluster_seed
    labels = cluster_features(seq, cfg, methods, seed=seed)
    out = args.out or _default_out("clusters")
    os.makedirs(out, exist_ok=True)
    summary = {"variant": seq.meta.get("variant"), "realization": seq.meta.get("realization"),
               "config_hash": seq.meta.get("config_hash"), "methods": {}}
    for m, lab in labels.items():
        np.savetxt(os.path.join(out, f"labels_{m}.csv"), lab, fmt="%d")
        acc = None if seq.labels is None else clustering_accuracy(lab, seq.labels)
        summary["methods"][m] = acc
        print(f"{m}: accuracy {acc}")
    if seq.labels is not None:
        np.savetxt(os.path.join(out, "truth.csv"), seq.labels, fmt="%d")
    with open(os.path.join(out, "clusters.json"), "w") as fh:
        json.dump(summary, fh, indent=1)


def _cmd_evaluate(args):
    records = []
    cfg_hash = ""
    variants, methods = [], []
    for path in args.input:
        with open(os.path.join(path, "clusters.json")) as fh:
            info = json.load(fh)
        cfg_hash = info.get("config_hash") or cfg_hash
        v = info.get("variant")
        variants.append(v)
        for m, acc in info["methods"].items():
            methods.append(m)
            if acc is None:
                truth = np.loadtxt(os.path.join(path, "truth.csv"), dtype=int, ndmin=1)
                acc = clustering_accuracy(np.loadtxt(os.path.join(path, f"labels_{m}.csv"),
                                                     dtype=int, ndmin=1), truth)
            records.append({"realization": info.get("realization") or 0, "variant": v,
                            "method": m, "accuracy": acc})
    table = ResultTable.from_records(records, list(dict.fromkeys(variants)),
                                     list(dict.fromkeys(methods)), config_hash=cfg_hash)
    out = args.out or _default_out("results")
    emit_results(table, out)
    print(table.format())


def _cmd_pipeline(args):
    cfg = _load_config(args)
    timings = {}
    table = run_pipeline(cfg, jobs=args.jobs, timings=timings)
    out = args.out or _default_out("results")
    emit_results(table, out, timings)
    print(table.format())
    for e in table.errors:
        print(f"realization {e['realization']} {e['stage']}: {e['error']}", file=sys.stderr)


def build_parser():
    p = argparse.ArgumentParser(prog="riemts", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version",
                   version=f"riemts {__version__} (config schema {CONFIG_SCHEMA_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or .)")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (overrides the config)")

    for name in ("gen-synthetic", "gen-wilson-cowan"):
        sp = sub.add_parser(name, help=f"generate a {name[4:]} dataset")
        common(sp)
        sp.add_argument("--realization", type=int, default=0)
    sp = sub.add_parser("extract", help="extract manifold features from a dataset")
    common(sp)
    sp.add_argument("--input", required=True, help="dataset directory")
    sp.add_argument("--variant", action="append", choices=VARIANTS)
    sp = sub.add_parser("cluster", help="cluster a feature sequence")
    common(sp)
    sp.add_argument("--input", required=True, help="feature-sequence directory")
    sp.add_argument("--method", action="append", choices=METHODS)
    sp.add_argument("--cluster-seed", type=int, help="k-means seed (default: from the features)")
    sp = sub.add_parser("evaluate", help="collect cluster outputs into a result table")
    sp.add_argument("--input", required=True, nargs="+", help="cluster output directories")
    sp.add_argument("--out")
    sp = sub.add_parser("pipeline", help="run the full experiment")
    common(sp)
    sp.add_argument("--method", action="append", choices=METHODS)
    sp.add_argument("--variant", action="append", choices=VARIANTS)
    sp.add_argument("--jobs", type=int, default=1)
    return p


COMMANDS = {
    "gen-synthetic": lambda a: _cmd_generate(a, "block-state"),
    "gen-wilson-cowan": lambda a: _cmd_generate(a, "wilson-cowan"),
    "extract": _cmd_extract,
    "cluster": _cmd_cluster,
    "evaluate": _cmd_evaluate,
    "pipeline": _cmd_pipeline,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"riemts {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
