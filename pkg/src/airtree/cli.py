"""Command line: ``airtree {build,gen,train,bench,report}``.

Settings come from BenchConfig defaults, then command-line flags, then the
JSON file given with --config (values there win over flags).

Exit codes: 0 success, 1 usage or config error, 2 data error,
3 correctness-gate failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import bench
from .learn import TrainingError
from .workload import DatasetError, WorkloadError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CORRECTNESS = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _float_list(s: str) -> list[float]:
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("run")
    g.add_argument("--seed", type=int)
    g.add_argument("--out-dir", dest="out_dir")
    g.add_argument("--config", dest="config_file", help="JSON file whose keys override flags")
    g.add_argument("-v", "--verbose", action="store_true")


def _dataset_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("dataset")
    g.add_argument("--csv", help="CSV file of points; synthetic points when omitted")
    g.add_argument("--x-column", dest="x_column", help="name or 0-based index")
    g.add_argument("--y-column", dest="y_column")
    g.add_argument("--header", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--head-limit", dest="head_limit", type=int)
    g.add_argument("--synthetic-count", dest="synthetic_count", type=int)
    g.add_argument("--distribution", choices=["uniform", "gaussian-clusters"])
    g.add_argument("--clusters", type=int)
    g = p.add_argument_group("R-tree")
    g.add_argument("-M", "--max-entries", dest="max_entries", type=int)
    g.add_argument("-m", "--min-entries", dest="min_entries", type=int)


def _workload_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("workload")
    g.add_argument("--selectivity", type=float)
    g.add_argument("--alpha-targets", dest="alpha_targets", type=_float_list)
    g.add_argument("--alpha-tol", dest="alpha_tol", type=float)
    g.add_argument("--count", type=int, help="queries per alpha bucket")


def _model_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("models")
    g.add_argument("--tau", type=float)
    g.add_argument("--max-grid", dest="grid_max", type=int)
    g.add_argument("--max-depth", dest="max_depth", type=int)
    g.add_argument("--trees", dest="n_trees", type=int)
    g.add_argument("--train-union", dest="train_union", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="airtree", description="R-tree / AI-tree / hybrid spatial index benchmark")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build", help="build and persist the R-tree")
    _common(s)
    _dataset_flags(s)

    s = sub.add_parser("gen", help="generate labelled workloads per alpha bucket")
    _common(s)
    _workload_flags(s)
    s.add_argument("--verify", action="store_true", help="re-check every stored query's alpha")

    s = sub.add_parser("train", help="fit AI-trees and the router")
    _common(s)
    _model_flags(s)

    s = sub.add_parser("bench", help="run all three indexes over every bucket")
    _common(s)
    s.add_argument("--io-ms", dest="io_ms", type=float, help="simulated cost of one leaf access")
    s.add_argument("--repeats", dest="repetitions", type=int)
    s.add_argument("--serial", action="store_true",
                   help="accepted for compatibility; queries always run serially")

    s = sub.add_parser("report", help="aggregate per-query logs into figure/table CSVs")
    s.add_argument("logs", nargs="+", help="run directories or per_query.csv files")
    s.add_argument("--out-dir", dest="out_dir", default="report")
    s.add_argument("-v", "--verbose", action="store_true")
    return p


_NOT_CONFIG = {"command", "config_file", "verbose", "verify", "serial", "logs"}


def resolve_config(args: argparse.Namespace) -> bench.BenchConfig:
    values = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG and v is not None}
    if getattr(args, "config_file", None):
        try:
            with open(args.config_file) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config_file}: {exc}") from None
        if not isinstance(overrides, dict):
            raise UsageError("config file must hold a JSON object")
        values.update(overrides)
    try:
        cfg = bench.BenchConfig.from_mapping(values)
        cfg.rtree_config
        cfg.workload_spec()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None
    if cfg.repetitions < 1:
        raise UsageError("--repeats must be at least 1")
    if not 0 < cfg.tau < 1:
        raise UsageError("--tau must lie in (0, 1)")
    return cfg


def _run(args: argparse.Namespace) -> int:
    if args.command == "report":
        written = bench.cmd_report(args.logs, args.out_dir)
        for kind, path in written.items():
            print(f"{kind}: {path}")
        return EXIT_OK

    cfg = resolve_config(args)
    if args.command == "build":
        meta = bench.cmd_build(cfg)
        print(f"points: {meta['points']}  leaves: {meta['leaf_count']}  height: {meta['height']}  "
              f"tree_size_bytes: {meta['tree_size_bytes']}")
    elif args.command == "gen":
        s = bench.cmd_gen(cfg, verify=args.verify)
        print(f"target result count: {s['target_count']}")
        for t, n in s["fill"].items():
            print(f"alpha {t}: {n} queries")
        a = s["selectivity_actual"]
        print(f"actual selectivity min/mean/max: {a['min']:.6g} / {a['mean']:.6g} / {a['max']:.6g}")
        if args.verify:
            print("verify: every stored query re-labels identically")
    elif args.command == "train":
        s = bench.cmd_train(cfg)
        total = s["router"]["size_bytes"]
        for key, f in s["fits"].items():
            total += f["size_bytes"]
            print(f"alpha {key}: grid {f['grid_dim']}x{f['grid_dim']}  training_fit {f['training_fit']:.4f}  "
                  f"models {f['models']}  bytes {f['size_bytes']}")
        r = s["router"]
        print(f"router held-out accuracy: {r['test_accuracy']:.4f} (majority baseline "
              f"{r['majority_baseline']:.4f})  bytes {r['size_bytes']}")
        print(f"model_size_bytes total: {total}  (R-tree {s['rtree_bytes']})")
    elif args.command == "bench":
        report = bench.cmd_bench(cfg)
        print(bench.format_report(report), end="")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return _run(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except bench.CorrectnessError as exc:
        print(f"correctness gate failed: {exc}", file=sys.stderr)
        return EXIT_CORRECTNESS
    except (DatasetError, WorkloadError, TrainingError, bench.StaleArtifactError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
