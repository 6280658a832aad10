"""The hybrid index: a learned router in front of the AI-tree and the R-tree.

Cost accounting follows a disk-resident-leaves model: internal nodes are in
memory, each leaf access costs one simulated I/O of ``io_ms_per_leaf``, and
CPU and prediction time are measured wall-clock.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from .aitree import AiTree
from .geometry import Point, Rect
from .learn import RandomForest
from .rtree import RTree

AI = "ai"
RTREE = "rtree"


@dataclass(frozen=True)
class CostModel:
    io_ms_per_leaf: float = 13.0

    def __post_init__(self):
        if not self.io_ms_per_leaf > 0:
            raise ValueError("io_ms_per_leaf must be positive")


@dataclass
class CostReport:
    route: str
    predict_ms: float
    cpu_ms: float
    leaf_accesses: int
    io_ms: float
    total_ms: float
    result_count: int
    path: str = ""

    @classmethod
    def build(cls, route: str, predict_ms: float, cpu_ms: float, leaf_accesses: int,
              result_count: int, cost: CostModel, path: str = "") -> "CostReport":
        io_ms = leaf_accesses * cost.io_ms_per_leaf
        return cls(route, predict_ms, cpu_ms, leaf_accesses, io_ms,
                   cpu_ms + predict_ms + io_ms, result_count, path or route)


def rtree_cost(tree: RTree, q: Rect, cost: CostModel) -> tuple[list[Point], CostReport]:
    t0 = time.perf_counter()
    tr = tree.range_query(q)
    cpu = (time.perf_counter() - t0) * 1e3
    return tr.results, CostReport.build(RTREE, 0.0, cpu, tr.leaf_accesses, len(tr.results), cost)


def aitree_cost(ai: AiTree, q: Rect, cost: CostModel, extra_predict_ms: float = 0.0
                ) -> tuple[list[Point], CostReport]:
    out = ai.query(q)
    return out.results, CostReport.build(AI, out.predict_ms + extra_predict_ms, out.cpu_ms,
                                         out.leaf_accesses, len(out.results), cost, out.path)


class HybridIndex:
    """Routes label-0 (high-overlap) queries to the AI-tree, the rest to the R-tree."""

    def __init__(self, ai: AiTree, rtree: RTree, router: RandomForest, tau: float = 0.75,
                 cost_model: CostModel | None = None):
        if ai.rtree is not rtree:
            raise ValueError("the AI-tree must be built on the same R-tree")
        if not 0 < tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        self.ai = ai
        self.rtree = rtree
        self.router = router
        self.tau = tau
        self.cost_model = cost_model or CostModel()

    def route(self, q: Rect) -> str:
        return AI if self.router.predict(q.as_tuple()) == 0 else RTREE

    def query(self, q: Rect) -> tuple[list[Point], CostReport]:
        t0 = time.perf_counter()
        route = self.route(q)
        router_ms = (time.perf_counter() - t0) * 1e3
        return self._run(route, q, router_ms)

    def _run(self, route: str, q: Rect, router_ms: float) -> tuple[list[Point], CostReport]:
        if route == AI:
            return aitree_cost(self.ai, q, self.cost_model, extra_predict_ms=router_ms)
        results, rep = rtree_cost(self.rtree, q, self.cost_model)
        rep.predict_ms = router_ms
        rep.total_ms = rep.cpu_ms + rep.predict_ms + rep.io_ms
        return results, rep

    def manifest(self, rtree_ref: str, ai_ref: str, router_ref: str) -> dict:
        return {"format": "airtree.hybrid", "version": 1, "rtree": rtree_ref, "aitree": ai_ref,
                "router": router_ref, "tau": self.tau, "cost_model": asdict(self.cost_model)}

    def save_manifest(self, path: str | Path, rtree_ref: str, ai_ref: str, router_ref: str):
        Path(path).write_text(json.dumps(self.manifest(rtree_ref, ai_ref, router_ref),
                                         indent=1, sort_keys=True))


def route(h: HybridIndex, q: Rect) -> str:
    return h.route(q)


def query(h: HybridIndex, q: Rect) -> tuple[list[Point], CostReport]:
    return h.query(q)


@dataclass
class RouteDelta:
    taken: str
    alternative: str
    correct: bool
    taken_report: CostReport
    alternative_report: CostReport
    delta_ms: float           # taken total minus alternative total
    delta_leaf_accesses: int  # taken minus alternative
    delta_io_ms: float


def mispredicted_route_cost(h: HybridIndex, q: Rect, true_alpha: float) -> RouteDelta:
    """Cost of the route the router picked versus the one it passed over.

    ``correct`` says whether the pick agrees with the query's true overlap
    ratio (AI-tree when alpha <= tau).  Positive deltas mean the pick was
    more expensive than the alternative.
    """
    t0 = time.perf_counter()
    taken = h.route(q)
    router_ms = (time.perf_counter() - t0) * 1e3
    other = RTREE if taken == AI else AI
    _, rep_taken = h._run(taken, q, router_ms)
    _, rep_other = h._run(other, q, router_ms)
    ideal = AI if true_alpha <= h.tau else RTREE
    return RouteDelta(
        taken=taken, alternative=other, correct=taken == ideal,
        taken_report=rep_taken, alternative_report=rep_other,
        delta_ms=rep_taken.total_ms - rep_other.total_ms,
        delta_leaf_accesses=rep_taken.leaf_accesses - rep_other.leaf_accesses,
        delta_io_ms=rep_taken.io_ms - rep_other.io_ms,
    )
