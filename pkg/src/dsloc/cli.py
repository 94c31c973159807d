"""Command line entry point: ``dsloc generate|index|localize|evaluate|verify``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

from .dataset import CityConfig, SchemaError, generate_synthetic_city, load_dataset, save_dataset
from .evaluate import DEFAULT_THRESHOLDS, evaluate_reports, write_curves_csv
from .nn_matching import DescriptorIndex
from .pipeline import METHODS, Localizer, PipelineConfig, dumps_report, index_references, run_queries

CONFIG_ENV = "DSLOC_CONFIG"
log = logging.getLogger("dsloc")


def _load_config(path: str | None) -> PipelineConfig:
    """PipelineConfig from a JSON file (``--config`` or $DSLOC_CONFIG), defaults otherwise."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return PipelineConfig()
    data = json.loads(Path(path).read_text())
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys in {path}: {sorted(unknown)}")
    if data.get("global_features") is not None:
        data["global_features"] = tuple(data["global_features"])
    return PipelineConfig(**data)


def cmd_generate(args) -> int:
    cfg = CityConfig(
        grid=args.grid,
        spacing_m=args.spacing,
        descriptors_per_image=args.descriptors,
        n_queries=args.queries,
        noise=args.noise,
        distractor_rate=args.distractors,
        twin_offset_m=args.twin_offset,
        seed=args.seed,
    )
    refs, queries = generate_synthetic_city(cfg)
    save_dataset(args.out, refs, queries, args.format)
    print(f"wrote {len(refs)} references and {len(queries)} queries to {args.out}")
    return 0


def cmd_index(args) -> int:
    refs, _ = load_dataset(args.data, args.format)
    index = index_references(refs, backend=args.backend, branching=args.branching, seed=args.seed)
    index.save(args.out)
    print(f"indexed {len(index)} descriptors ({args.backend}) into {args.out}")
    return 0


def cmd_localize(args) -> int:
    config = _load_config(args.config)
    overrides = {
        "theta": args.theta,
        "beta": args.beta,
        "gamma": args.gamma,
        "clusters": args.clusters,
        "max_pool": args.pool,
        "backend": args.backend,
    }
    config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    refs, queries = load_dataset(args.data, args.format)
    index = DescriptorIndex.load(args.index) if args.index else index_references(
        refs, backend=config.backend, seed=args.seed
    )
    localizer = Localizer(refs, config, index=index)
    methods = METHODS if args.method == "both" else (args.method,)
    reports = run_queries(localizer, queries, methods)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for rep in reports:
            out.write(dumps_report(rep) + "\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_evaluate(args) -> int:
    with open(args.reports) as fh:
        reports = [json.loads(line) for line in fh if line.strip()]
    thresholds = tuple(args.thresholds) if args.thresholds else DEFAULT_THRESHOLDS
    curves = evaluate_reports(reports, thresholds)
    if args.out:
        write_curves_csv(args.out, curves, thresholds)
    for method, acc in curves.items():
        cells = "  ".join(f"{t:g}m:{a:.3f}" for t, a in zip(thresholds, acc))
        print(f"{method:5s} {cells}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    checks = run_all(quick=args.quick)
    for check in checks:
        print(check.line())
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsloc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic city dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--grid", type=int, default=10)
    g.add_argument("--spacing", type=float, default=12.0)
    g.add_argument("--descriptors", type=int, default=20)
    g.add_argument("--queries", type=int, default=50)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--distractors", type=float, default=0.3)
    g.add_argument("--twin-offset", type=float, default=None,
                   help="add a duplicate-content grid this many metres east (forces vote ties)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=("jsonl", "npz"), default="jsonl")
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("index", help="build a descriptor index for a dataset")
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--backend", choices=("exact", "kmeans"), default="exact")
    i.add_argument("--branching", type=int, default=16)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--format", choices=("jsonl", "npz"), default=None)
    i.set_defaults(func=cmd_index)

    loc = sub.add_parser("localize", help="localize every query, one JSON report per line")
    loc.add_argument("--data", required=True)
    loc.add_argument("--index", help="prebuilt index from `dsloc index`")
    loc.add_argument("--out")
    loc.add_argument("--method", choices=(*METHODS, "both"), default="cds")
    loc.add_argument("--theta", type=float)
    loc.add_argument("--beta", type=float)
    loc.add_argument("--gamma", type=float)
    loc.add_argument("--clusters", type=int)
    loc.add_argument("--pool", type=int)
    loc.add_argument("--backend", choices=("exact", "kmeans"))
    loc.add_argument("--seed", type=int, default=0, help="seed for the k-means tree")
    loc.add_argument("--config", help=f"JSON pipeline config (default: ${CONFIG_ENV})")
    loc.add_argument("--format", choices=("jsonl", "npz"), default=None)
    loc.set_defaults(func=cmd_localize)

    e = sub.add_parser("evaluate", help="accuracy-at-threshold curves from reports")
    e.add_argument("--reports", required=True)
    e.add_argument("--thresholds", type=float, nargs="+")
    e.add_argument("--out", help="CSV output path")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("verify", help="run the oracle suites")
    v.add_argument("--quick", action="store_true", help="skip the end-to-end runs, smaller samples")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (SchemaError, ValueError, KeyError, FileNotFoundError, RuntimeError) as exc:
        print(f"dsloc {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
