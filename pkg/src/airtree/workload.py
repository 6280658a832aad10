"""Datasets, synthetic range-query workloads and training-set preparation."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import Point, Rect
from .rtree import RTree

log = logging.getLogger(__name__)

DEFAULT_ALPHA_TARGETS = (0.1, 0.25, 0.5, 0.75, 1.0)


class DatasetError(ValueError):
    pass


class WorkloadError(RuntimeError):
    pass


@dataclass
class Dataset:
    """Distinct, finite 2-d points in insertion order."""

    points: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 2)
        if len(self.points) == 0:
            raise DatasetError("dataset has no points")
        if not np.isfinite(self.points).all():
            raise DatasetError("dataset contains non-finite coordinates")
        if len(np.unique(self.points, axis=0)) != len(self.points):
            raise DatasetError("dataset contains duplicate points")

    def __len__(self):
        return len(self.points)

    @property
    def bounds(self) -> Rect:
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return Rect(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    def as_points(self) -> list[Point]:
        return [Point(x, y) for x, y in self.points.tolist()]


def _column_index(header: list[str] | None, col: int | str) -> int:
    if isinstance(col, int):
        return col
    if col.lstrip("-").isdigit():
        return int(col)
    if header is None:
        raise DatasetError(f"column {col!r} given by name but the file has no header row")
    try:
        return header.index(col)
    except ValueError:
        raise DatasetError(f"column {col!r} not in header {header!r}") from None


def ingest_csv(path: str | Path, x_column: int | str = 0, y_column: int | str = 1,
               header: bool | None = None, head_limit: int | None = None,
               delimiter: str = ",", name: str | None = None) -> Dataset:
    """Read points from a CSV file.

    Rows whose coordinates are missing or do not parse as finite numbers are
    dropped, as are exact repeats of an earlier point.  ``head_limit`` keeps
    the first N distinct points in file order.  ``header=None`` treats the
    first row as a header when either column is given by name.
    """
    path = Path(path)
    if head_limit is not None and head_limit < 1:
        raise DatasetError("head_limit must be positive")
    if header is None:
        header = any(isinstance(c, str) and not c.lstrip("-").isdigit() for c in (x_column, y_column))
    seen: set[tuple[float, float]] = set()
    out: list[tuple[float, float]] = []
    dropped = 0
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        names = next(reader, None) if header else None
        xi = _column_index(names, x_column)
        yi = _column_index(names, y_column)
        for row in reader:
            try:
                x, y = float(row[xi]), float(row[yi])
            except (IndexError, ValueError):
                dropped += 1
                continue
            if not (math.isfinite(x) and math.isfinite(y)):
                dropped += 1
                continue
            if (x, y) in seen:
                continue
            seen.add((x, y))
            out.append((x, y))
            if head_limit is not None and len(out) >= head_limit:
                break
    if not out:
        raise DatasetError(f"{path}: no usable rows")
    if dropped:
        log.info("%s: dropped %d rows with missing or non-numeric coordinates", path, dropped)
    return Dataset(np.array(out), name=name or path.stem)


def synth_points(count: int, distribution: str = "uniform", seed: int = 0,
                 clusters: int = 4) -> Dataset:
    """Deterministic synthetic points in the unit square.

    ``gaussian-clusters`` draws cluster centres uniformly in [0.15, 0.85]^2
    with per-cluster spreads in [0.03, 0.1], then samples points around a
    uniformly chosen centre.  Exact repeats are redrawn.
    """
    if count < 1:
        raise DatasetError("count must be >= 1")
    rng = np.random.default_rng(seed)
    if distribution == "uniform":
        def draw(n):
            return rng.random((n, 2))
    elif distribution in ("gaussian-clusters", "gaussian"):
        centres = rng.uniform(0.15, 0.85, size=(clusters, 2))
        spreads = rng.uniform(0.03, 0.1, size=clusters)

        def draw(n):
            which = rng.integers(clusters, size=n)
            return centres[which] + rng.standard_normal((n, 2)) * spreads[which, None]
    else:
        raise DatasetError(f"unknown distribution {distribution!r}")

    pts = draw(count)
    while True:
        _, first = np.unique(pts, axis=0, return_index=True)
        if len(first) == count:
            break
        keep = np.zeros(count, dtype=bool)
        keep[first] = True
        pts[~keep] = draw(int((~keep).sum()))
    name = f"synth-{distribution}-{count}-s{seed}"
    return Dataset(pts, name=name)


# -- workloads ---------------------------------------------------------------


@dataclass(frozen=True)
class WorkloadSpec:
    selectivity: float
    query_count: int = 1000
    alpha_targets: tuple[float, ...] = DEFAULT_ALPHA_TARGETS
    alpha_tolerance: float = 0.05
    rng_seed: int = 0
    # attempt budget as a multiple of the total number of requested queries
    attempt_factor: int = 200
    # accepted result count is target * (1 +/- count_tolerance)
    count_tolerance: float = 0.2
    # query aspect ratios (width / height) are log-uniform in [1/a, a]
    max_aspect: float = 16.0

    def __post_init__(self):
        if not 0 < self.selectivity < 1:
            raise ValueError("selectivity must lie in (0, 1)")
        if self.query_count < 1:
            raise ValueError("query_count must be positive")
        t = tuple(float(a) for a in self.alpha_targets)
        object.__setattr__(self, "alpha_targets", t)
        if not t or list(t) != sorted(t) or not all(0 < a <= 1 for a in t):
            raise ValueError("alpha_targets must be ascending values in (0, 1]")
        if not 0 <= self.alpha_tolerance < 1:
            raise ValueError("alpha_tolerance must lie in [0, 1)")
        if self.max_aspect < 1:
            raise ValueError("max_aspect must be >= 1")

    def target_count(self, n_points: int) -> int:
        k = round(self.selectivity * n_points)
        if k < 1:
            raise ValueError(f"selectivity {self.selectivity} x {n_points} points is below one result")
        return k


@dataclass
class LabeledQuery:
    rect: Rect
    alpha: float
    tn: int
    vn: int
    true_leaf_ids: tuple[int, ...]
    selectivity_actual: float
    alpha_target: float | None = None

    @property
    def features(self) -> tuple[float, float, float, float]:
        return self.rect.as_tuple()

    def to_json(self) -> dict:
        return {
            "rect": list(self.rect.as_tuple()),
            "alpha": self.alpha,
            "tn": self.tn,
            "vn": self.vn,
            "true_leaf_ids": list(self.true_leaf_ids),
            "selectivity_actual": self.selectivity_actual,
            "alpha_target": self.alpha_target,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LabeledQuery":
        return cls(Rect(*d["rect"]), d["alpha"], d["tn"], d["vn"], tuple(d["true_leaf_ids"]),
                   d["selectivity_actual"], d.get("alpha_target"))


def label_query(tree: RTree, q: Rect, n_points: int, alpha_target: float | None = None) -> LabeledQuery:
    tr = tree.range_query(q)
    return LabeledQuery(rect=q, alpha=tr.alpha, tn=tr.tn, vn=tr.vn,
                        true_leaf_ids=tuple(sorted(tr.true_leaves)),
                        selectivity_actual=len(tr.results) / n_points,
                        alpha_target=alpha_target)


def match_bucket(alpha: float, targets: Sequence[float], tol: float) -> int | None:
    """Index of the first target within ``tol`` of ``alpha``, if any."""
    for i, t in enumerate(targets):
        if abs(alpha - t) <= tol + 1e-12:
            return i
    return None


def grow_query(points: np.ndarray, center: np.ndarray, k: int, aspect: float) -> Rect:
    """Smallest rectangle of the given aspect, centred on ``center``, holding k points.

    Uses the k-th smallest scaled Chebyshev distance from the centre, so the
    rectangle is grown in one step rather than iteratively.
    """
    sx = math.sqrt(aspect)
    sy = 1.0 / sx
    d = np.maximum(np.abs(points[:, 0] - center[0]) / sx, np.abs(points[:, 1] - center[1]) / sy)
    r = float(np.partition(d, k - 1)[k - 1]) if k < len(d) else float(d.max())
    cx, cy = float(center[0]), float(center[1])
    return Rect(cx - r * sx, cy - r * sy, cx + r * sx, cy + r * sy)


def stabbing_depth(tree: RTree, points: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Number of leaf MBRs covering each point."""
    L = np.array([leaf.mbr for leaf in tree.leaves()])
    out = np.empty(len(points), dtype=np.int64)
    for i in range(0, len(points), chunk):
        p = points[i:i + chunk, None, :]
        inside = ((p[..., 0] >= L[:, 0]) & (p[..., 0] <= L[:, 2])
                  & (p[..., 1] >= L[:, 1]) & (p[..., 1] <= L[:, 3]))
        out[i:i + chunk] = inside.sum(axis=1)
    return out


# Seed strata, as quantile cut points over stabbing depth (shallow first).
_STRATA_CUTS = (0.0, 0.01, 0.05, 0.2, 0.5, 1.0)
_MAX_SEED_CANDIDATES = 50_000
_EXPLORE = 0.1


def _seed_strata(ds: Dataset, tree: RTree, rng: np.random.Generator) -> list[np.ndarray]:
    n = len(ds)
    if n > _MAX_SEED_CANDIDATES:
        cand = np.sort(rng.choice(n, _MAX_SEED_CANDIDATES, replace=False))
    else:
        cand = np.arange(n)
    depth = stabbing_depth(tree, ds.points[cand])
    order = cand[np.argsort(depth, kind="stable")]
    cuts = [int(round(c * len(order))) for c in _STRATA_CUTS]
    strata = [order[a:b] for a, b in zip(cuts, cuts[1:]) if b > a]
    return strata


def synth_queries(ds: Dataset, tree: RTree, spec: WorkloadSpec) -> list[LabeledQuery]:
    """Rejection-sample fixed-selectivity queries into overlap-ratio buckets.

    Each attempt picks a seed data point, draws an aspect ratio, and grows a
    centred rectangle until it holds the target number of points.  The query
    is run on ``tree``; it is kept when its result count is within tolerance
    of the target and its overlap ratio lands in a bucket that still has
    room.

    Seed points are drawn uniformly from one of several strata ordered by
    how many leaf MBRs cover the point.  Shallow points yield high-alpha
    queries and deep ones low-alpha queries, so each attempt targets the
    least-filled open bucket and picks the stratum with the best observed
    hit rate for it (with a little uniform exploration).

    Returned queries are grouped by bucket in ascending target order, in
    generation order within a bucket.
    """
    n = len(ds)
    k = spec.target_count(n)
    lo = k * (1 - spec.count_tolerance)
    hi = k * (1 + spec.count_tolerance)
    targets = spec.alpha_targets
    nb = len(targets)
    buckets: list[list[LabeledQuery]] = [[] for _ in targets]
    budget = spec.attempt_factor * spec.query_count * nb
    rng = np.random.default_rng(spec.rng_seed)
    strata = _seed_strata(ds, tree, rng)
    hits = np.zeros((len(strata), nb))
    tries = np.zeros(len(strata))
    log_aspect = math.log(spec.max_aspect)
    pts = ds.points
    attempts = 0
    open_buckets = nb
    while open_buckets and attempts < budget:
        attempts += 1
        fill = [len(b) if len(b) < spec.query_count else math.inf for b in buckets]
        needy = int(np.argmin(fill))
        if rng.random() < _EXPLORE:
            s = int(rng.integers(len(strata)))
        else:
            s = int(np.argmax((hits[:, needy] + 1) / (tries + 2)))
        tries[s] += 1
        members = strata[s]
        center = pts[members[rng.integers(len(members))]]
        aspect = math.exp(rng.uniform(-log_aspect, log_aspect))
        q = grow_query(pts, center, k, aspect)
        tr = tree.range_query(q)
        count = len(tr.results)
        if count == 0 or not lo <= count <= hi:
            continue
        b = match_bucket(tr.alpha, targets, spec.alpha_tolerance)
        if b is None:
            continue
        hits[s, b] += 1
        if len(buckets[b]) >= spec.query_count:
            continue
        buckets[b].append(LabeledQuery(
            rect=q, alpha=tr.alpha, tn=tr.tn, vn=tr.vn,
            true_leaf_ids=tuple(sorted(tr.true_leaves)),
            selectivity_actual=count / n, alpha_target=targets[b]))
        if len(buckets[b]) == spec.query_count:
            open_buckets -= 1
    fills = {t: len(b) for t, b in zip(targets, buckets)}
    if not any(fills.values()):
        raise WorkloadError(f"no query matched any alpha bucket within {attempts} attempts")
    if open_buckets:
        log.warning("attempt budget (%d) exhausted; bucket fill %s", budget, fills)
    log.info("generated workload in %d attempts; bucket fill %s", attempts, fills)
    return [q for b in buckets for q in b]


def group_by_target(queries: Iterable[LabeledQuery]) -> dict[float, list[LabeledQuery]]:
    out: dict[float, list[LabeledQuery]] = {}
    for q in queries:
        out.setdefault(q.alpha_target, []).append(q)
    return dict(sorted(out.items(), key=lambda kv: (kv[0] is None, kv[0] or 0.0)))


def save_workload(path: str | Path, queries: Iterable[LabeledQuery]):
    with Path(path).open("w") as fh:
        for q in queries:
            fh.write(json.dumps(q.to_json(), sort_keys=True) + "\n")


def load_workload(path: str | Path) -> list[LabeledQuery]:
    with Path(path).open() as fh:
        return [LabeledQuery.from_json(json.loads(line)) for line in fh if line.strip()]


# -- training sets -----------------------------------------------------------


@dataclass
class TrainingExample:
    features: tuple[float, float, float, float]
    labels: np.ndarray  # bool, one entry per leaf ID

    def bits(self) -> str:
        return "".join("1" if b else "0" for b in self.labels)

    @property
    def label_ids(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.labels))


def encode_labels(leaf_ids: Iterable[int], leaf_count: int) -> np.ndarray:
    v = np.zeros(leaf_count, dtype=bool)
    for i in leaf_ids:
        if not 0 <= i < leaf_count:
            raise ValueError(f"leaf id {i} outside [0, {leaf_count})")
        v[i] = True
    return v


def make_multilabel_training(queries: Sequence[LabeledQuery], leaf_count: int) -> list[TrainingExample]:
    out = []
    skipped = 0
    for q in queries:
        if not q.true_leaf_ids:
            skipped += 1
            continue
        out.append(TrainingExample(q.features, encode_labels(q.true_leaf_ids, leaf_count)))
    if skipped:
        log.warning("skipped %d queries with no true leaves", skipped)
    return out


@dataclass
class BinaryExample:
    features: tuple[float, float, float, float]
    label: int
    alpha: float = field(default=float("nan"), compare=False)


def make_binary_training(queries: Sequence[LabeledQuery], tau: float = 0.75) -> list[BinaryExample]:
    """Label 0 (high overlap) when alpha <= tau, else 1 (low overlap)."""
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    return [BinaryExample(q.features, 0 if q.alpha <= tau else 1, q.alpha) for q in queries]


def stratified_split(examples: Sequence[BinaryExample], test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[list[BinaryExample], list[BinaryExample]]:
    """Shuffle each class with a fixed seed and hold out ``test_fraction`` of it."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in (0, 1):
        idx = [i for i, e in enumerate(examples) if e.label == label]
        perm = rng.permutation(len(idx))
        n_test = int(round(test_fraction * len(idx)))
        chosen = sorted(idx[j] for j in perm[:n_test])
        held = set(chosen)
        test.extend(examples[i] for i in chosen)
        train.extend(examples[i] for i in idx if i not in held)
    order = {id(e): i for i, e in enumerate(examples)}
    train.sort(key=lambda e: order[id(e)])
    test.sort(key=lambda e: order[id(e)])
    return train, test
