import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from airtree.geometry import Rect, check_point
from airtree.rtree import (INTERNAL_ENTRY_BYTES, LEAF_ENTRY_BYTES, NODE_HEADER_BYTES, RTree,
                           RTreeConfig, build_rtree, linear_pick_seeds, linear_split)


def brute(points, q: Rect):
    return sorted((x, y) for x, y in points if q.xmin <= x <= q.xmax and q.ymin <= y <= q.ymax)


def check_invariants(tree: RTree):
    """Occupancy, MBR tightness and DFS ID density by a full walk."""
    M, m = tree.config.max_entries, tree.config.min_entries
    depths = set()

    def walk(node, depth, is_root):
        if not is_root:
            assert m <= node.count <= M
        elif not node.leaf:
            assert node.count >= 2
        b = node.entry_boxes()
        tight = (b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max())
        assert node.mbr == tuple(float(v) for v in tight)
        if node.leaf:
            depths.add(depth)
        else:
            assert len(node.children) == node.count
            for i, child in enumerate(node.children):
                assert tuple(node.boxes[i]) == child.mbr
                walk(child, depth + 1, False)

    walk(tree.root, 0, True)
    assert len(depths) == 1  # balanced
    ids = [leaf.leaf_id for leaf in tree.leaves()]
    assert ids == list(range(tree.leaf_count))


coords = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def point_sets(draw, max_size=400):
    pts = draw(st.lists(st.tuples(coords, coords), min_size=1, max_size=max_size))
    M = draw(st.integers(3, 12))
    return pts, M


@st.composite
def rects(draw):
    x0, x1 = sorted(draw(st.tuples(coords, coords)))
    y0, y1 = sorted(draw(st.tuples(coords, coords)))
    return Rect(x0, y0, x1, y1)


def check_invariants_loose(tree: RTree):
    """MBR tightness and ID density only (hand-built trees ignore occupancy)."""
    for node in tree.iter_nodes():
        b = node.entry_boxes()
        assert node.mbr == (b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max())
    assert [l.leaf_id for l in tree.leaves()] == list(range(tree.leaf_count))


class TestConfig:
    def test_default_min_is_half(self):
        assert RTreeConfig(200).min_entries == 100
        assert RTreeConfig(7).min_entries == 3

    @pytest.mark.parametrize("M,m", [(2, None), (10, 1), (10, 6), (0, None)])
    def test_rejects_bad_bounds(self, M, m):
        with pytest.raises(ValueError):
            RTreeConfig(M, m)

    def test_rejects_non_finite_points(self):
        t = RTree(RTreeConfig(4))
        for bad in [(float("nan"), 0.0), (0.0, float("inf"))]:
            with pytest.raises(ValueError):
                t.insert(*bad)
        with pytest.raises(ValueError):
            check_point(float("-inf"), 1.0)


class TestSplit:
    def test_201_points_force_one_split(self):
        rng = np.random.default_rng(1)
        tree = build_rtree(rng.random((201, 2)), RTreeConfig(200, 100))
        assert not tree.root.leaf
        counts = sorted(c.count for c in tree.root.children)
        assert len(counts) == 2 and all(c.leaf for c in tree.root.children)
        assert counts[0] >= 100 and counts[1] <= 101 and sum(counts) == 201

    def test_pick_seeds_widest_normalised_separation(self):
        # x: highest low 9 (entry 2), lowest high 1 (entry 0): separation 8 of width 10
        # y: separation at most 1 of width 3
        boxes = np.array([[0, 0, 1, 1], [4, 0, 5, 2], [9, 1, 10, 3]], float)
        assert set(linear_pick_seeds(boxes)) == {0, 2}

    def test_pick_seeds_y_axis(self):
        boxes = np.array([[0, 0, 1, 1], [0.5, 5, 1.5, 6], [0.2, 10, 1.2, 11]], float)
        assert set(linear_pick_seeds(boxes)) == {0, 2}

    def test_split_respects_minimum(self):
        # one far outlier: the remaining entries must still fill the small group to m
        pts = np.array([[0, 0]] * 1 + [[100 + i, 100] for i in range(6)], float)
        boxes = np.hstack([pts, pts])
        a, b = linear_split(boxes, 3)
        assert sorted(a + b) == list(range(7))
        assert min(len(a), len(b)) >= 3

    def test_uniform_2000_leaf_occupancy(self):
        rng = np.random.default_rng(2)
        tree = build_rtree(rng.random((2000, 2)), RTreeConfig(200))
        assert all(100 <= leaf.count <= 200 for leaf in tree.leaves())
        check_invariants(tree)


class TestLeafIds:
    def test_single_leaf(self):
        tree = build_rtree([(0.0, 0.0), (1.0, 1.0)], RTreeConfig(4))
        assert tree.assign_leaf_ids() == 1
        assert tree.leaves()[0].leaf_id == 0

    def test_empty_tree_rejected(self):
        with pytest.raises(ValueError):
            RTree().assign_leaf_ids()

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        tree = build_rtree(rng.random((300, 2)), RTreeConfig(8))
        before = [id(leaf) for leaf in tree.leaves()]
        n = tree.leaf_count
        assert tree.assign_leaf_ids() == n
        assert [id(leaf) for leaf in tree.leaves()] == before

    def test_worked_example_dfs_order(self):
        # root -> four internal nodes holding leaf pairs, stored in the order
        # (R7, R8), (R12, R13), (R9, R10), (R11, R14); leaf k spans x in [k, k + 0.8]
        names = ["R7", "R8", "R12", "R13", "R9", "R10", "R11", "R14"]

        def leaf(k):
            return {"mbr": [k, 0.0, k + 0.8, 1.0], "points": [[k, 0.0], [k + 0.8, 1.0]]}

        def inner(kids):
            return {"mbr": [kids[0]["mbr"][0], 0.0, kids[-1]["mbr"][2], 1.0], "children": kids}

        groups = [inner([leaf(float(k)), leaf(float(k + 1))]) for k in range(0, 8, 2)]
        snap = {"format": "airtree.rtree", "version": 1, "max_entries": 4, "min_entries": 2,
                "size": 16, "ids_assigned": False, "root": inner(groups)}
        tree = RTree.from_dict(snap)
        assert tree.assign_leaf_ids() == 8
        got = {names[int(leaf.boxes[0, 0])]: leaf.leaf_id for leaf in tree.leaves()}
        assert got == {n: i for i, n in enumerate(names)}
        check_invariants_loose(tree)
        # query visits R12 and R13 but only R12 holds an answer
        tr = tree.range_query(Rect(2.5, 0.9, 3.2, 1.0))
        assert tr.visited_leaves == [2, 3] and tr.true_leaves == [2]
        assert (tr.vn, tr.tn, tr.alpha) == (2, 1, 0.5)
        assert tree.scan_leaf(3, Rect(2.5, 0.9, 3.2, 1.0)) == ([], 1)

    @settings(max_examples=40, deadline=None)
    @given(point_sets())
    def test_ids_dense(self, data):
        pts, M = data
        tree = build_rtree(pts, RTreeConfig(M))
        assert sorted(l.leaf_id for l in tree.leaves()) == list(range(tree.leaf_count))


class TestRangeQuery:
    def test_disjoint_query(self):
        tree = build_rtree([(0.0, 0.0), (1.0, 1.0)], RTreeConfig(4))
        tr = tree.range_query(Rect(5, 5, 6, 6))
        assert tr.results == [] and tr.leaf_accesses == 0

    def test_duplicates_are_stored(self):
        tree = build_rtree([(0.5, 0.5), (0.5, 0.5), (0.1, 0.9)], RTreeConfig(4))
        assert len(tree.range_query(Rect(0.4, 0.4, 0.6, 0.6)).results) == 2

    def test_boundary_is_inside(self):
        tree = build_rtree([(1.0, 1.0), (2.0, 2.0)], RTreeConfig(4))
        assert len(tree.range_query(Rect(2.0, 2.0, 3.0, 3.0)).results) == 1
        assert len(tree.range_query(Rect(0.0, 0.0, 1.0, 1.0)).results) == 1

    def test_extraneous_leaf_scan(self):
        rng = np.random.default_rng(4)
        tree = build_rtree(rng.random((3000, 2)), RTreeConfig(16))
        for _ in range(500):
            c = rng.random(2)
            q = Rect(c[0], c[1], c[0] + 0.02, c[1] + 0.02)
            tr = tree.range_query(q)
            wasted = set(tr.visited_leaves) - set(tr.true_leaves)
            if wasted:
                hits, n = tree.scan_leaf(wasted.pop(), q)
                assert hits == [] and n == 1
                break
        else:
            pytest.fail("no query visited an extraneous leaf")

    def test_thousand_queries_match_scan(self):
        rng = np.random.default_rng(5)
        pts = rng.random((5000, 2))
        tree = build_rtree(pts, RTreeConfig(20))
        plist = [tuple(p) for p in pts.tolist()]
        for _ in range(1000):
            c, s = rng.random(2), rng.random(2) * 0.1
            q = Rect(c[0], c[1], c[0] + s[0], c[1] + s[1])
            tr = tree.range_query(q)
            assert sorted(map(tuple, tr.results)) == brute(plist, q)
            assert set(tr.true_leaves) <= set(tr.visited_leaves)
            union = []
            for lid in tr.true_leaves:
                union += tree.scan_leaf(lid, q)[0]
            assert sorted(union) == sorted(tr.results)

    def test_unknown_leaf(self):
        tree = build_rtree([(0.0, 0.0)], RTreeConfig(4))
        with pytest.raises(KeyError):
            tree.scan_leaf(1, Rect(0, 0, 1, 1))

    @settings(max_examples=60, deadline=None)
    @given(point_sets(), st.lists(rects(), min_size=1, max_size=10))
    def test_search_matches_brute_force(self, data, qs):
        pts, M = data
        tree = build_rtree(pts, RTreeConfig(M))
        for q in qs:
            tr = tree.range_query(q)
            assert sorted(map(tuple, tr.results)) == brute(pts, q)
            assert tr.tn <= tr.vn
            assert all(q.contains_point(*p) for p in tr.results)


class TestInvariantsRandomTrees:
    def test_thousand_random_trees(self):
        rng = np.random.default_rng(6)
        for i in range(1000):
            n = int(rng.integers(1, 150))
            M = int(rng.integers(3, 10))
            m = int(rng.integers(2, -(-M // 2) + 1))
            pts = rng.random((n, 2)) if i % 2 else rng.integers(0, 5, (n, 2)).astype(float)
            check_invariants(build_rtree(pts, RTreeConfig(M, m)))

    @settings(max_examples=40, deadline=None)
    @given(point_sets())
    def test_invariants_property(self, data):
        pts, M = data
        check_invariants(build_rtree(pts, RTreeConfig(M)))


class TestSizeAndPersistence:
    def test_empty_size_is_header(self):
        assert RTree().tree_size_bytes() == NODE_HEADER_BYTES

    def test_size_formula(self):
        tree = build_rtree(np.random.default_rng(7).random((50, 2)), RTreeConfig(8))
        nodes = list(tree.iter_nodes())
        leaves = [n for n in nodes if n.leaf]
        inner = [n for n in nodes if not n.leaf]
        expect = (len(nodes) * NODE_HEADER_BYTES + 50 * LEAF_ENTRY_BYTES
                  + sum(n.count for n in inner) * INTERNAL_ENTRY_BYTES)
        assert len(leaves) == tree.leaf_count
        assert tree.tree_size_bytes() == expect

    def test_size_monotone(self):
        tree = RTree(RTreeConfig(4))
        last = tree.tree_size_bytes()
        for x, y in np.random.default_rng(8).random((200, 2)).tolist():
            tree.insert(x, y)
            now = tree.tree_size_bytes()
            assert now >= last
            last = now

    def test_identical_builds_equal(self):
        pts = np.random.default_rng(9).random((500, 2))
        a, b = build_rtree(pts, RTreeConfig(10)), build_rtree(pts, RTreeConfig(10))
        assert a.tree_size_bytes() == b.tree_size_bytes()
        assert a == b

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(10)
        pts = rng.random((800, 2)) * 1e-3 + np.pi
        tree = build_rtree(pts, RTreeConfig(12))
        tree.save(tmp_path / "t.json")
        back = RTree.load(tmp_path / "t.json")
        assert back == tree
        assert np.array_equal(back.points(), tree.points())
        back.save(tmp_path / "u.json")
        assert (tmp_path / "t.json").read_bytes() == (tmp_path / "u.json").read_bytes()
        q = Rect(np.pi, np.pi, np.pi + 5e-4, np.pi + 5e-4)
        assert back.range_query(q).visited_leaves == tree.range_query(q).visited_leaves

    def test_load_rejects_foreign_snapshot(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text(json.dumps({"format": "other", "version": 1}))
        with pytest.raises(ValueError):
            RTree.load(p)
