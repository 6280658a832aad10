"""Build / generate / train / benchmark pipeline behind the command line.

Everything a step produces lands under ``out_dir``::

    rtree.json                   R-tree snapshot
    build.json                   dataset and tree metadata
    workloads/alpha_0.10.jsonl   one labelled workload per alpha bucket
    workloads/summary.json
    models/router.json           binary router (random forest)
    models/aitree_alpha_0.10/    one AI-tree bundle per bucket (or aitree_union/)
    models/train.json            grid sizes, fit, router accuracy, model bytes
    bench/per_query.csv          one row per query x variant x repetition
    bench/summary.csv            per-bucket aggregates
    bench/sizes.csv              R-tree vs model bytes per bucket
    bench/summary.txt            the same, as a readable table

CSV columns are listed in ``PER_QUERY_COLUMNS``, ``SUMMARY_COLUMNS``,
``SIZE_COLUMNS`` and ``SERIES_COLUMNS``; those lists are the stable schema.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import aitree as aitree_mod
from .aitree import AiTree
from .geometry import Rect
from .hybrid import CostModel, HybridIndex, aitree_cost, rtree_cost
from .learn import binary_accuracy, load_model, majority_baseline, save_model, train_forest
from .rtree import RTree, RTreeConfig
from .workload import (Dataset, DatasetError, LabeledQuery, WorkloadSpec, group_by_target,
                       ingest_csv, label_query, load_workload, make_binary_training,
                       save_workload, stratified_split, synth_points, synth_queries)

log = logging.getLogger(__name__)

VARIANTS = ("rtree", "aitree", "hybrid")

PER_QUERY_COLUMNS = [
    "query_id", "selectivity", "max_entries", "alpha_target", "alpha", "tn", "vn",
    "variant", "rep", "route", "path", "result_count", "leaf_accesses",
    "predict_ms", "cpu_ms", "io_ms", "total_ms",
]
SUMMARY_COLUMNS = [
    "selectivity", "max_entries", "alpha_target", "query_count",
    "rtree_mean_total_ms", "rtree_median_total_ms", "rtree_std_total_ms", "rtree_mean_leaf_accesses",
    "aitree_mean_total_ms", "aitree_median_total_ms", "aitree_std_total_ms", "aitree_mean_leaf_accesses",
    "hybrid_mean_total_ms", "hybrid_median_total_ms", "hybrid_std_total_ms", "hybrid_mean_leaf_accesses",
    "speedup_aitree", "speedup_hybrid", "hybrid_routed_ai", "aitree_fallbacks",
    "grid_dim", "training_fit",
]
SIZE_COLUMNS = ["selectivity", "max_entries", "rtree_bytes", "alpha_target", "aitree_bytes",
                "router_bytes", "ml_bytes"]
SERIES_COLUMNS = ["selectivity", "max_entries", "alpha_target", "variant", "query_count",
                  "mean_total_ms", "median_total_ms", "mean_leaf_accesses", "mean_io_ms",
                  "mean_cpu_ms", "mean_predict_ms"]

# columns whose values depend on wall-clock measurements
TIMING_COLUMNS = {
    "predict_ms", "cpu_ms", "total_ms", "mean_total_ms", "median_total_ms", "mean_cpu_ms",
    "mean_predict_ms", "speedup_aitree", "speedup_hybrid",
    *(f"{v}_{s}" for v in VARIANTS for s in ("mean_total_ms", "median_total_ms", "std_total_ms")),
}


class CorrectnessError(RuntimeError):
    """Raised when the three indexes and the brute-force scan disagree."""


class StaleArtifactError(ValueError):
    pass


@dataclass
class BenchConfig:
    out_dir: str = "out"
    seed: int = 0
    # dataset: a CSV file, or synthetic points when csv is empty
    csv: str = ""
    x_column: str = "0"
    y_column: str = "1"
    header: bool | None = None
    head_limit: int | None = None
    synthetic_count: int = 100_000
    distribution: str = "gaussian-clusters"
    clusters: int = 4
    # R-tree
    max_entries: int = 200
    min_entries: int | None = None
    # workload
    selectivity: float = 0.0002
    count: int = 200
    alpha_targets: tuple[float, ...] = (0.1, 0.25, 0.5, 0.75, 1.0)
    alpha_tol: float = 0.05
    # models
    tau: float = 0.75
    grid_max: int = 20
    max_depth: int = 30
    n_trees: int = 100
    test_fraction: float = 0.2
    train_union: bool = False
    # benchmark
    io_ms: float = 13.0
    repetitions: int = 3

    @classmethod
    def from_mapping(cls, d: dict) -> "BenchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "alpha_targets" in d:
            d["alpha_targets"] = tuple(float(a) for a in d["alpha_targets"])
        return cls(**d)

    def seeds(self) -> dict[str, int]:
        """Independent sub-seeds derived from the single run seed."""
        state = np.random.SeedSequence(self.seed).generate_state(4)
        return dict(zip(("data", "workload", "split", "forest"), (int(s) for s in state)))

    def workload_spec(self) -> WorkloadSpec:
        return WorkloadSpec(selectivity=self.selectivity, query_count=self.count,
                            alpha_targets=self.alpha_targets, alpha_tolerance=self.alpha_tol,
                            rng_seed=self.seeds()["workload"])

    @property
    def rtree_config(self) -> RTreeConfig:
        return RTreeConfig(self.max_entries, self.min_entries)

    @property
    def out(self) -> Path:
        return Path(self.out_dir)


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def bucket_name(alpha_target: float) -> str:
    return f"alpha_{alpha_target:.2f}"


def load_dataset(cfg: BenchConfig) -> Dataset:
    if cfg.csv:
        def col(c: str):
            c = str(c)
            return int(c) if c.isdigit() else c
        return ingest_csv(cfg.csv, col(cfg.x_column), col(cfg.y_column), header=cfg.header,
                          head_limit=cfg.head_limit)
    ds = synth_points(cfg.synthetic_count, cfg.distribution, seed=cfg.seeds()["data"],
                      clusters=cfg.clusters)
    if cfg.head_limit is not None:
        ds = Dataset(ds.points[:cfg.head_limit], ds.name)
    return ds


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise DatasetError(f"missing artifact {path}; run the earlier pipeline steps first") from None


# -- build ---------------------------------------------------------------------


def cmd_build(cfg: BenchConfig) -> dict:
    ds = load_dataset(cfg)
    tree = RTree(cfg.rtree_config)
    for x, y in ds.points.tolist():
        tree.insert(x, y)
    leaf_count = tree.assign_leaf_ids()
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    snap = out / "rtree.json"
    tree.save(snap)
    meta = {
        "dataset": ds.name, "points": len(ds), "bounds": list(ds.bounds.as_tuple()),
        "max_entries": tree.config.max_entries, "min_entries": tree.config.min_entries,
        "leaf_count": leaf_count, "height": tree.height(),
        "tree_size_bytes": tree.tree_size_bytes(), "snapshot_sha256": sha256_file(snap),
    }
    _write_json(out / "build.json", meta)
    return meta


def load_tree(cfg: BenchConfig) -> tuple[RTree, dict]:
    meta = _read_json(cfg.out / "build.json")
    snap = cfg.out / "rtree.json"
    if not snap.exists():
        raise DatasetError(f"missing artifact {snap}")
    if sha256_file(snap) != meta["snapshot_sha256"]:
        raise StaleArtifactError("rtree.json does not match build.json; rebuild")
    return RTree.load(snap), meta


# -- gen -----------------------------------------------------------------------


def cmd_gen(cfg: BenchConfig, verify: bool = False) -> dict:
    tree, meta = load_tree(cfg)
    # query seeds are drawn from the snapshot's points, so gen needs no dataset access
    ds = Dataset(tree.points(), meta["dataset"])
    spec = cfg.workload_spec()
    queries = synth_queries(ds, tree, spec)
    wdir = cfg.out / "workloads"
    wdir.mkdir(parents=True, exist_ok=True)
    for old in wdir.glob("alpha_*.jsonl"):
        old.unlink()
    groups = group_by_target(queries)
    files = {}
    for t in spec.alpha_targets:
        qs = groups.get(t, [])
        if not qs:
            log.warning("alpha bucket %.2f is empty", t)
            continue
        path = wdir / f"{bucket_name(t)}.jsonl"
        save_workload(path, qs)
        files[f"{t:.2f}"] = path.name
    sel = [q.selectivity_actual for q in queries]
    summary = {
        "selectivity": spec.selectivity, "target_count": spec.target_count(len(ds)),
        "alpha_targets": list(spec.alpha_targets), "alpha_tolerance": spec.alpha_tolerance,
        "requested_per_bucket": spec.query_count,
        "fill": {f"{t:.2f}": len(groups.get(t, [])) for t in spec.alpha_targets},
        "files": files,
        "selectivity_actual": {"min": min(sel), "mean": statistics.fmean(sel), "max": max(sel)},
        "snapshot_sha256": meta["snapshot_sha256"],
    }
    _write_json(wdir / "summary.json", summary)
    if verify:
        verify_workloads(cfg, tree)
    return summary


def load_workloads(cfg: BenchConfig) -> dict[float, list[LabeledQuery]]:
    summary = _read_json(cfg.out / "workloads" / "summary.json")
    out = {}
    for key, name in summary["files"].items():
        out[float(key)] = load_workload(cfg.out / "workloads" / name)
    return dict(sorted(out.items()))


def verify_workloads(cfg: BenchConfig, tree: RTree) -> int:
    """Re-run every stored query and check its recorded overlap statistics."""
    n = len(tree)
    checked = 0
    for t, qs in load_workloads(cfg).items():
        for i, q in enumerate(qs):
            fresh = label_query(tree, q.rect, n, q.alpha_target)
            if (fresh.alpha, fresh.tn, fresh.vn, fresh.true_leaf_ids) != (q.alpha, q.tn, q.vn, q.true_leaf_ids):
                raise CorrectnessError(f"workload {bucket_name(t)} query {i} does not re-verify")
            checked += 1
    return checked


# -- train ---------------------------------------------------------------------


def cmd_train(cfg: BenchConfig) -> dict:
    tree, meta = load_tree(cfg)
    workloads = load_workloads(cfg)
    if not workloads:
        raise DatasetError("no workloads to train on")
    mdir = cfg.out / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    for old in mdir.glob("aitree_*"):
        for f in old.glob("*"):
            f.unlink()
        old.rmdir()
    rtree_ref = {"path": "rtree.json", "sha256": meta["snapshot_sha256"]}
    bounds = Rect(*meta["bounds"])

    fits = {}
    if cfg.train_union:
        pooled = [q for qs in workloads.values() for q in qs]
        ai = aitree_mod.fit(pooled, tree, bounds, max_grid=cfg.grid_max, max_depth=cfg.max_depth)
        ai.save(mdir / "aitree_union", rtree_ref)
        fits["union"] = _fit_summary(ai)
    else:
        for t, qs in workloads.items():
            ai = aitree_mod.fit(qs, tree, bounds, max_grid=cfg.grid_max, max_depth=cfg.max_depth)
            ai.save(mdir / f"aitree_{bucket_name(t)}", rtree_ref)
            fits[f"{t:.2f}"] = _fit_summary(ai)

    seeds = cfg.seeds()
    pooled = [q for qs in workloads.values() for q in qs]
    examples = make_binary_training(pooled, cfg.tau)
    train, test = stratified_split(examples, cfg.test_fraction, seeds["split"])
    router = train_forest(train, cfg.n_trees, seeds["forest"])
    save_model(router, mdir / "router.json")
    summary = {
        "mode": "union" if cfg.train_union else "per-bucket",
        "tau": cfg.tau, "fits": fits,
        "router": {
            "n_train": len(train), "n_test": len(test),
            "test_accuracy": binary_accuracy(router, test),
            "majority_baseline": majority_baseline(test),
            "train_accuracy": binary_accuracy(router, train),
            "size_bytes": router.size_bytes(),
        },
        "rtree_bytes": meta["tree_size_bytes"],
        "snapshot_sha256": meta["snapshot_sha256"],
    }
    _write_json(mdir / "train.json", summary)
    for key in fits:
        bundle = "aitree_union" if key == "union" else f"aitree_alpha_{key}"
        _write_json(mdir / f"hybrid_{key}.json", {
            "format": "airtree.hybrid", "version": 1, "rtree": "rtree.json",
            "aitree": f"models/{bundle}", "router": "models/router.json",
            "tau": cfg.tau, "cost_model": {"io_ms_per_leaf": cfg.io_ms},
        })
    return summary


def _fit_summary(ai: AiTree) -> dict:
    return {"grid_dim": ai.g, "training_fit": ai.training_fit, "models": ai.grid.model_count,
            "size_bytes": ai.size_bytes(), "n_train": ai.n_train,
            "history": [list(h) for h in ai.history]}


def load_bundles(cfg: BenchConfig, tree: RTree, meta: dict,
                 workloads: dict[float, list[LabeledQuery]]) -> dict[float, AiTree]:
    """AI-tree per bucket, checked against the snapshot and the workloads."""
    mdir = cfg.out / "models"
    union_dir = mdir / "aitree_union"
    out = {}
    union = None
    if union_dir.exists():
        union = AiTree.load(union_dir, tree)
        _check_bundle(union_dir, meta)
        pooled = [q for qs in workloads.values() for q in qs]
        if union.fingerprint != aitree_mod.workload_fingerprint(pooled):
            raise StaleArtifactError("union AI-tree was trained on a different workload")
    for t, qs in workloads.items():
        if union is not None:
            out[t] = union
            continue
        d = mdir / f"aitree_{bucket_name(t)}"
        if not d.exists():
            raise DatasetError(f"missing AI-tree bundle {d}")
        _check_bundle(d, meta)
        ai = AiTree.load(d, tree)
        if ai.fingerprint != aitree_mod.workload_fingerprint(qs):
            raise StaleArtifactError(f"{d.name} was trained on a different workload")
        out[t] = ai
    return out


def _check_bundle(d: Path, meta: dict):
    m = AiTree.read_manifest(d)
    if m.get("rtree", {}).get("sha256") != meta["snapshot_sha256"]:
        raise StaleArtifactError(f"{d.name} was fitted on a different R-tree snapshot")


# -- bench ---------------------------------------------------------------------


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)
    sizes: list[dict] = field(default_factory=list)
    router_accuracy: float | None = None
    fits: dict = field(default_factory=dict)
    mismatches: int = 0

    def row(self, alpha_target: float) -> dict:
        for r in self.rows:
            if r["alpha_target"] == alpha_target:
                return r
        raise KeyError(alpha_target)


def _sorted_results(results) -> list[tuple[float, float]]:
    return sorted((float(p[0]), float(p[1])) for p in results)


def brute_force(points: np.ndarray, q: Rect) -> list[tuple[float, float]]:
    m = ((points[:, 0] >= q.xmin) & (points[:, 0] <= q.xmax)
         & (points[:, 1] >= q.ymin) & (points[:, 1] <= q.ymax))
    return sorted(map(tuple, points[m].tolist()))


def run_queries(tree: RTree, ai: AiTree, hybrid: HybridIndex, queries: Sequence[LabeledQuery],
                points: np.ndarray, repetitions: int = 1, context: dict | None = None):
    """Run every query through the three indexes; yield per-query log rows.

    Raises CorrectnessError on the first query whose answers disagree with
    each other or with a brute-force scan.
    """
    cost = hybrid.cost_model
    context = context or {}
    for i, q in enumerate(queries):
        base = {"query_id": i, **context, "alpha_target": q.alpha_target, "alpha": q.alpha,
                "tn": q.tn, "vn": q.vn}
        for rep in range(repetitions):
            r_res, r_rep = rtree_cost(tree, q.rect, cost)
            a_res, a_rep = aitree_cost(ai, q.rect, cost)
            h_res, h_rep = hybrid.query(q.rect)
            if rep == 0:
                truth = brute_force(points, q.rect)
                answers = {"rtree": _sorted_results(r_res), "aitree": _sorted_results(a_res),
                           "hybrid": _sorted_results(h_res)}
                bad = [k for k, v in answers.items() if v != truth]
                if bad:
                    raise CorrectnessError(json.dumps({
                        "query_id": i, "alpha_target": q.alpha_target,
                        "rect": list(q.rect.as_tuple()), "disagreeing": bad,
                        "expected_count": len(truth),
                        "counts": {k: len(v) for k, v in answers.items()}}))
            for variant, rep_ in (("rtree", r_rep), ("aitree", a_rep), ("hybrid", h_rep)):
                yield {**base, "variant": variant, "rep": rep, "route": rep_.route,
                       "path": rep_.path, "result_count": rep_.result_count,
                       "leaf_accesses": rep_.leaf_accesses, "predict_ms": rep_.predict_ms,
                       "cpu_ms": rep_.cpu_ms, "io_ms": rep_.io_ms, "total_ms": rep_.total_ms}


def aggregate(rows: Sequence[dict], fits: dict | None = None) -> list[dict]:
    """Per-bucket summary rows from per-query log rows."""
    fits = fits or {}
    by_bucket: dict[tuple, list[dict]] = {}
    for r in rows:
        key = (float(r["selectivity"]), int(r["max_entries"]), float(r["alpha_target"]))
        by_bucket.setdefault(key, []).append(r)
    out = []
    for (sel, M, t), rs in sorted(by_bucket.items()):
        row = {"selectivity": sel, "max_entries": M, "alpha_target": t,
               "query_count": len({r["query_id"] for r in rs})}
        for v in VARIANTS:
            vr = [r for r in rs if r["variant"] == v]
            totals = [float(r["total_ms"]) for r in vr]
            per_rep: dict[int, list[float]] = {}
            for r in vr:
                per_rep.setdefault(int(r["rep"]), []).append(float(r["total_ms"]))
            rep_means = [statistics.fmean(x) for _, x in sorted(per_rep.items())]
            row[f"{v}_mean_total_ms"] = statistics.fmean(totals)
            row[f"{v}_median_total_ms"] = statistics.median(totals)
            row[f"{v}_std_total_ms"] = statistics.pstdev(rep_means) if len(rep_means) > 1 else 0.0
            row[f"{v}_mean_leaf_accesses"] = statistics.fmean(int(r["leaf_accesses"]) for r in vr)
        row["speedup_aitree"] = row["rtree_mean_total_ms"] / row["aitree_mean_total_ms"]
        row["speedup_hybrid"] = row["rtree_mean_total_ms"] / row["hybrid_mean_total_ms"]
        first = [r for r in rs if int(r["rep"]) == 0]
        row["hybrid_routed_ai"] = sum(1 for r in first if r["variant"] == "hybrid" and r["route"] == "ai")
        row["aitree_fallbacks"] = sum(1 for r in first if r["variant"] == "aitree"
                                      and r["path"] != aitree_mod.PREDICTED)
        fit = fits.get(f"{t:.2f}", fits.get("union", {}))
        row["grid_dim"] = fit.get("grid_dim", "")
        row["training_fit"] = fit.get("training_fit", "")
        out.append(row)
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def read_csv(path: Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_bench(cfg: BenchConfig) -> BenchReport:
    tree, meta = load_tree(cfg)
    workloads = load_workloads(cfg)
    train = _read_json(cfg.out / "models" / "train.json")
    if train["snapshot_sha256"] != meta["snapshot_sha256"]:
        raise StaleArtifactError("models were trained against a different R-tree snapshot")
    bundles = load_bundles(cfg, tree, meta, workloads)
    router = load_model(cfg.out / "models" / "router.json")
    cost = CostModel(cfg.io_ms)
    points = tree.points()
    sel = _read_json(cfg.out / "workloads" / "summary.json")["selectivity"]
    context = {"selectivity": sel, "max_entries": meta["max_entries"]}

    bdir = cfg.out / "bench"
    bdir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    try:
        for t, qs in workloads.items():
            hybrid = HybridIndex(bundles[t], tree, router, train["tau"], cost)
            rows.extend(run_queries(tree, bundles[t], hybrid, qs, points, cfg.repetitions, context))
    except CorrectnessError as exc:
        (bdir / "mismatch.json").write_text(str(exc) + "\n")
        raise
    write_csv(bdir / "per_query.csv", PER_QUERY_COLUMNS, rows)

    report = BenchReport(router_accuracy=train["router"]["test_accuracy"], fits=train["fits"])
    report.rows = aggregate(rows, train["fits"])
    write_csv(bdir / "summary.csv", SUMMARY_COLUMNS, report.rows)
    for t in workloads:
        ai_bytes = bundles[t].size_bytes()
        report.sizes.append({
            "selectivity": sel, "max_entries": meta["max_entries"],
            "rtree_bytes": meta["tree_size_bytes"], "alpha_target": t, "aitree_bytes": ai_bytes,
            "router_bytes": router.size_bytes(), "ml_bytes": ai_bytes + router.size_bytes()})
    write_csv(bdir / "sizes.csv", SIZE_COLUMNS, report.sizes)
    (bdir / "summary.txt").write_text(format_report(report))
    return report


def format_report(report: BenchReport) -> str:
    lines = []
    hdr = (f"{'alpha':>6} {'n':>5} {'R-tree ms':>11} {'AI-tree ms':>11} {'AI+R ms':>11} "
           f"{'R leaves':>9} {'AI leaves':>9} {'AI+R lvs':>9} {'x AI':>6} {'x AI+R':>7} {'g':>3}")
    lines.append(hdr)
    lines.append("-" * len(hdr))
    for r in report.rows:
        lines.append(
            f"{r['alpha_target']:>6.2f} {r['query_count']:>5d} {r['rtree_mean_total_ms']:>11.2f} "
            f"{r['aitree_mean_total_ms']:>11.2f} {r['hybrid_mean_total_ms']:>11.2f} "
            f"{r['rtree_mean_leaf_accesses']:>9.2f} {r['aitree_mean_leaf_accesses']:>9.2f} "
            f"{r['hybrid_mean_leaf_accesses']:>9.2f} {r['speedup_aitree']:>6.2f} "
            f"{r['speedup_hybrid']:>7.2f} {r['grid_dim']!s:>3}")
    if report.router_accuracy is not None:
        lines.append(f"router held-out accuracy: {report.router_accuracy:.3f}")
    if report.sizes:
        lines.append("")
        lines.append(f"{'alpha':>6} {'R-tree bytes':>13} {'ML bytes':>10} {'ratio':>7}")
        for s in report.sizes:
            lines.append(f"{s['alpha_target']:>6.2f} {s['rtree_bytes']:>13d} {s['ml_bytes']:>10d} "
                         f"{s['ml_bytes'] / s['rtree_bytes']:>7.2%}")
    return "\n".join(lines) + "\n"


# -- report --------------------------------------------------------------------


def cmd_report(log_paths: Sequence[str | Path], out_dir: str | Path) -> dict[str, Path]:
    """Aggregate one or more per-query logs into figure- and table-shaped CSVs.

    Each path may be a per_query.csv file or a run directory containing
    bench/per_query.csv; a sizes.csv next to a log is picked up as well.
    """
    logs, sizes, missing = [], [], []
    for p in map(Path, log_paths):
        f = p / "bench" / "per_query.csv" if p.is_dir() else p
        if not f.exists():
            missing.append(str(f))
            continue
        logs.append(f)
        s = f.parent / "sizes.csv"
        if s.exists():
            sizes.append(s)
    if missing:
        raise DatasetError("missing per-query logs: " + ", ".join(missing))
    rows = [r for f in logs for r in read_csv(f)]
    series = []
    keyed: dict[tuple, list[dict]] = {}
    for r in rows:
        key = (float(r["selectivity"]), int(r["max_entries"]), float(r["alpha_target"]), r["variant"])
        keyed.setdefault(key, []).append(r)
    order = {v: i for i, v in enumerate(VARIANTS)}
    for (sel, M, t, v), rs in sorted(keyed.items(), key=lambda kv: (kv[0][:3], order[kv[0][3]])):
        series.append({
            "selectivity": sel, "max_entries": M, "alpha_target": t, "variant": v,
            "query_count": len({(r["query_id"]) for r in rs}),
            "mean_total_ms": statistics.fmean(float(r["total_ms"]) for r in rs),
            "median_total_ms": statistics.median(float(r["total_ms"]) for r in rs),
            "mean_leaf_accesses": statistics.fmean(int(r["leaf_accesses"]) for r in rs),
            "mean_io_ms": statistics.fmean(float(r["io_ms"]) for r in rs),
            "mean_cpu_ms": statistics.fmean(float(r["cpu_ms"]) for r in rs),
            "mean_predict_ms": statistics.fmean(float(r["predict_ms"]) for r in rs),
        })
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"series": out / "figure_series.csv"}
    write_csv(written["series"], SERIES_COLUMNS, series)
    if sizes:
        size_rows = sorted((r for s in sizes for r in read_csv(s)),
                           key=lambda r: (float(r["selectivity"]), int(r["max_entries"]),
                                          float(r["alpha_target"])))
        written["sizes"] = out / "model_sizes.csv"
        write_csv(written["sizes"], SIZE_COLUMNS, size_rows)
    return written


def strip_timing(path: str | Path) -> list[list[str]]:
    """CSV content with wall-clock columns removed, for determinism checks."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [i for i, c in enumerate(rows[0]) if c not in TIMING_COLUMNS]
    return [[r[i] for i in keep] for r in rows]


def config_dict(cfg: BenchConfig) -> dict:
    d = asdict(cfg)
    d["alpha_targets"] = list(cfg.alpha_targets)
    return d
