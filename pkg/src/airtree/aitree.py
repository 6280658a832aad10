"""Grid-indexed multi-label models that predict an R-tree's true leaves.

The data space is cut into a g x g grid.  Every training query is handed to
each cell its rectangle touches, one multi-label tree is fitted per cell
that received any query, and at query time the predictions of all touched
cells are unioned.  Only the predicted leaves are scanned; an empty
prediction or a predicted leaf with no result sends the query to the
ordinary R-tree search instead, so answers are never approximate on the
fitted workload.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Point, Rect
from .learn import MultiLabelTree, load_model, save_model, train_mltree
from .rtree import RTree
from .workload import LabeledQuery, TrainingExample, make_multilabel_training

log = logging.getLogger(__name__)

BUNDLE_FORMAT = "airtree.aitree"
BUNDLE_VERSION = 1

PREDICTED = "predicted"
FALLBACK_EMPTY = "fallback_empty"
FALLBACK_MISPREDICT = "fallback_mispredict"


class ModelGrid:
    """g x g equal cells over ``bounds``; cell index is row * g + column.

    Cells own their low edges for tiling (the top and right bounds belong to
    the last row and column), but rectangle routing uses closed overlap, so
    a query touching a shared edge consults both neighbours.
    """

    def __init__(self, bounds: Rect, g: int, leaf_count: int):
        if g < 1:
            raise ValueError("grid dimension must be positive")
        self.bounds = bounds
        self.g = g
        self.leaf_count = leaf_count
        self.cells: dict[int, MultiLabelTree] = {}
        self.xedges = np.linspace(bounds.xmin, bounds.xmax, g + 1)
        self.yedges = np.linspace(bounds.ymin, bounds.ymax, g + 1)
        self.xedges[-1], self.yedges[-1] = bounds.xmax, bounds.ymax

    def cell_rect(self, index: int) -> Rect:
        row, col = divmod(index, self.g)
        return Rect(float(self.xedges[col]), float(self.yedges[row]),
                    float(self.xedges[col + 1]), float(self.yedges[row + 1]))

    def cell_of_point(self, x: float, y: float) -> int | None:
        b = self.bounds
        if not b.contains_point(x, y):
            return None
        col = min(int(np.searchsorted(self.xedges, x, side="right")) - 1, self.g - 1)
        row = min(int(np.searchsorted(self.yedges, y, side="right")) - 1, self.g - 1)
        return row * self.g + col

    def _span(self, edges: np.ndarray, lo: float, hi: float) -> range:
        first = int(np.searchsorted(edges[1:], lo, side="left"))
        last = int(np.searchsorted(edges[:-1], hi, side="right")) - 1
        return range(first, min(last, self.g - 1) + 1)

    def overlapping_cells(self, q: Rect) -> list[int]:
        if not self.bounds.intersects(q):
            return []
        cols = self._span(self.xedges, q.xmin, q.xmax)
        rows = self._span(self.yedges, q.ymin, q.ymax)
        return [r * self.g + c for r in rows for c in cols]

    @property
    def model_count(self) -> int:
        return len(self.cells)

    def size_bytes(self) -> int:
        return sum(m.size_bytes() for m in self.cells.values())


def overlapping_cells(grid: ModelGrid, q: Rect) -> list[int]:
    return grid.overlapping_cells(q)


def assign_to_cells(grid: ModelGrid, examples: Sequence[TrainingExample]) -> dict[int, list[int]]:
    """Cell index -> indices of the examples whose rectangles touch it."""
    per_cell: dict[int, list[int]] = {}
    for i, e in enumerate(examples):
        for c in grid.overlapping_cells(Rect(*e.features)):
            per_cell.setdefault(c, []).append(i)
    return dict(sorted(per_cell.items()))


def workload_fingerprint(queries: Sequence[LabeledQuery]) -> str:
    h = hashlib.sha256()
    for q in queries:
        h.update(json.dumps([list(q.rect.as_tuple()), list(q.true_leaf_ids)]).encode())
        h.update(b"\n")
    return h.hexdigest()


@dataclass
class AiQueryOutcome:
    results: list[Point]
    leaf_accesses: int
    path: str
    predicted_leaf_ids: list[int]
    predict_ms: float = 0.0
    cpu_ms: float = 0.0


@dataclass
class FitReport:
    grid_dim: int
    training_fit: float
    model_count: int
    history: list[tuple[int, float]] = field(default_factory=list)


class AiTree:
    def __init__(self, grid: ModelGrid, rtree: RTree, training_fit: float = 0.0,
                 fingerprint: str = "", n_train: int = 0):
        self.grid = grid
        self.rtree = rtree
        self.training_fit = training_fit
        self.fingerprint = fingerprint
        self.n_train = n_train
        self.history: list[tuple[int, float]] = []

    @property
    def g(self) -> int:
        return self.grid.g

    def predict_leaves(self, q: Rect) -> set[int]:
        feats = q.as_tuple()
        out: set[int] = set()
        cells = self.grid.cells
        for c in self.grid.overlapping_cells(q):
            model = cells.get(c)
            if model is not None:
                out |= model.predict(feats)
        return out

    def query(self, q: Rect) -> AiQueryOutcome:
        t0 = time.perf_counter()
        predicted = sorted(self.predict_leaves(q))
        t1 = time.perf_counter()
        if not predicted:
            tr = self.rtree.range_query(q)
            out = AiQueryOutcome(tr.results, tr.leaf_accesses, FALLBACK_EMPTY, predicted)
        else:
            results: list[Point] = []
            accesses = 0
            missed = False
            for leaf_id in predicted:
                hits, n = self.rtree.scan_leaf(leaf_id, q)
                accesses += n
                if not hits:
                    missed = True
                results.extend(hits)
            if missed:
                tr = self.rtree.range_query(q)
                out = AiQueryOutcome(tr.results, accesses + tr.leaf_accesses, FALLBACK_MISPREDICT, predicted)
            else:
                out = AiQueryOutcome(results, accesses, PREDICTED, predicted)
        t2 = time.perf_counter()
        out.predict_ms = (t1 - t0) * 1e3
        out.cpu_ms = (t2 - t1) * 1e3
        return out

    def size_bytes(self) -> int:
        return self.grid.size_bytes()

    # -- persistence ---------------------------------------------------------

    def save(self, directory: str | Path, rtree_ref: dict | None = None):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        cells = {}
        for c, model in sorted(self.grid.cells.items()):
            name = f"cell_{c:05d}.json"
            save_model(model, d / name)
            cells[str(c)] = name
        manifest = {
            "format": BUNDLE_FORMAT, "version": BUNDLE_VERSION,
            "grid_dim": self.g, "bounds": list(self.grid.bounds.as_tuple()),
            "leaf_count": self.grid.leaf_count, "cells": cells,
            "training_fit": self.training_fit, "workload_fingerprint": self.fingerprint,
            "n_train": self.n_train, "history": [list(h) for h in self.history],
            "rtree": rtree_ref or {},
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory: str | Path, rtree: RTree) -> "AiTree":
        d = Path(directory)
        m = json.loads((d / "manifest.json").read_text())
        if m.get("format") != BUNDLE_FORMAT or m.get("version") != BUNDLE_VERSION:
            raise ValueError(f"{d} is not an AI-tree bundle")
        if m["leaf_count"] != rtree.leaf_count:
            raise ValueError(f"bundle was fitted on {m['leaf_count']} leaves, tree has {rtree.leaf_count}")
        grid = ModelGrid(Rect(*m["bounds"]), m["grid_dim"], m["leaf_count"])
        for c, name in m["cells"].items():
            grid.cells[int(c)] = load_model(d / name)
        ai = cls(grid, rtree, m["training_fit"], m["workload_fingerprint"], m["n_train"])
        ai.history = [tuple(h) for h in m["history"]]
        return ai

    @staticmethod
    def read_manifest(directory: str | Path) -> dict:
        return json.loads((Path(directory) / "manifest.json").read_text())


def _fit_grid(grid: ModelGrid, examples: Sequence[TrainingExample], max_depth: int) -> float:
    per_cell = assign_to_cells(grid, examples)
    for c, idx in per_cell.items():
        grid.cells[c] = train_mltree([examples[i] for i in idx], max_depth=max_depth)
    if not examples:
        return 1.0
    hits = 0
    for e in examples:
        truth = set(np.flatnonzero(e.labels).tolist())
        pred: set[int] = set()
        for c in grid.overlapping_cells(Rect(*e.features)):
            model = grid.cells.get(c)
            if model is not None:
                pred |= model.predict(e.features)
        hits += pred == truth
    return hits / len(examples)


def fit(queries: Sequence[LabeledQuery], tree: RTree, bounds: Rect | None = None,
        max_grid: int = 20, min_grid: int = 2, max_depth: int = 30) -> AiTree:
    """Grow the grid from ``min_grid`` until the training workload is fitted exactly.

    Stops at the first grid size whose unioned predictions reproduce every
    training query's true leaf set.  If none does by ``max_grid``, keeps the
    best size seen (smallest on ties) and logs a warning; the R-tree
    fallbacks still keep answers exact.
    """
    if not queries:
        raise ValueError("cannot fit an AI-tree on an empty workload")
    if bounds is None:
        bounds = tree.bounds
    leaf_count = tree.leaf_count
    examples = make_multilabel_training(queries, leaf_count)
    best: tuple[float, ModelGrid] | None = None
    history = []
    for g in range(min_grid, max_grid + 1):
        grid = ModelGrid(bounds, g, leaf_count)
        acc = _fit_grid(grid, examples, max_depth)
        history.append((g, acc))
        log.info("grid %dx%d: %d models, training fit %.4f", g, g, grid.model_count, acc)
        if best is None or acc > best[0]:
            best = (acc, grid)
        if acc == 1.0:
            break
    acc, grid = best
    if acc < 1.0:
        log.warning("no grid up to %dx%d fits the workload exactly; using %dx%d at %.4f",
                    max_grid, max_grid, grid.g, grid.g, acc)
    ai = AiTree(grid, tree, acc, workload_fingerprint(queries), len(examples))
    ai.history = history
    return ai


def predict_leaves(ai: AiTree, q: Rect) -> set[int]:
    return ai.predict_leaves(q)


def query(ai: AiTree, q: Rect) -> AiQueryOutcome:
    return ai.query(q)
