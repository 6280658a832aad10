from dataclasses import dataclass

import pytest

from airtree import aitree
from airtree.learn import RandomForest, train_forest
from airtree.rtree import RTree, RTreeConfig, build_rtree
from airtree.workload import (Dataset, LabeledQuery, WorkloadSpec, group_by_target,
                              make_binary_training, synth_points, synth_queries)


@dataclass
class World:
    ds: Dataset
    tree: RTree
    spec: WorkloadSpec
    queries: list[LabeledQuery]
    buckets: dict[float, list[LabeledQuery]]
    fits: dict[float, aitree.AiTree]
    router: RandomForest


@pytest.fixture(scope="session")
def world() -> World:
    """A small clustered dataset with a fitted AI-tree per alpha bucket."""
    ds = synth_points(20_000, "gaussian-clusters", seed=21)
    tree = build_rtree(ds.points, RTreeConfig(50))
    spec = WorkloadSpec(selectivity=0.0005, query_count=40, rng_seed=5)
    qs = synth_queries(ds, tree, spec)
    buckets = group_by_target(qs)
    fits = {t: aitree.fit(b, tree, ds.bounds) for t, b in buckets.items()}
    router = train_forest(make_binary_training(qs, 0.75), n_trees=25, seed=9)
    return World(ds, tree, spec, qs, buckets, fits, router)


# acceptance verdicts, printed as one line per criterion at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
