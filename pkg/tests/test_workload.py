import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from airtree.geometry import Rect
from airtree.rtree import RTreeConfig, build_rtree
from airtree.workload import (BinaryExample, Dataset, DatasetError, LabeledQuery, WorkloadError,
                              WorkloadSpec, encode_labels, grow_query, ingest_csv, label_query,
                              load_workload, make_binary_training, make_multilabel_training,
                              match_bucket, save_workload, stratified_split, synth_points,
                              synth_queries)


def _lq(alpha, ids=(0,), rect=Rect(0, 0, 1, 1)):
    tn = len(ids)
    vn = round(tn / alpha) if alpha else tn
    return LabeledQuery(rect, alpha, tn, vn, tuple(ids), 0.01)


@pytest.fixture(scope="module")
def small_setup():
    ds = synth_points(20_000, "gaussian-clusters", seed=3)
    tree = build_rtree(ds.points, RTreeConfig(50))
    spec = WorkloadSpec(selectivity=0.0005, query_count=25, rng_seed=11)
    return ds, tree, spec, synth_queries(ds, tree, spec)


class TestIngest:
    def test_duplicates_and_missing(self, tmp_path):
        rows = ["x,y", "1,1", "2,2", "1,1", "3,3", "4,", "5,5", "2,2", "6,6", "7,7", "8,8"]
        p = tmp_path / "pts.csv"
        p.write_text("\n".join(rows) + "\n")
        ds = ingest_csv(p, "x", "y")
        assert len(ds) == 7
        assert ds.points.tolist() == [[1, 1], [2, 2], [3, 3], [5, 5], [6, 6], [7, 7], [8, 8]]
        assert ds.bounds == Rect(1, 1, 8, 8)

    def test_bad_values_dropped(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("0,a,1\n1,b,nan\n2,c,inf\nq,d,3\n4,e,4\n")
        ds = ingest_csv(p, 0, 2)
        assert ds.points.tolist() == [[0, 1], [4, 4]]

    def test_head_limit_keeps_order(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("".join(f"{i % 7},{i}\n" for i in range(100)))
        ds = ingest_csv(p, 0, 1, head_limit=10)
        assert len(ds) == 10
        assert ds.points[:, 1].tolist() == list(range(10))

    def test_deterministic(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("".join(f"{i * 0.1},{i * 0.3}\n" for i in range(50)))
        a, b = ingest_csv(p), ingest_csv(p)
        assert np.array_equal(a.points, b.points) and a.name == b.name

    def test_errors(self, tmp_path):
        with pytest.raises(DatasetError):
            ingest_csv(tmp_path / "missing.csv")
        p = tmp_path / "empty.csv"
        p.write_text("a,b\nc,d\n")
        with pytest.raises(DatasetError):
            ingest_csv(p)
        with pytest.raises(DatasetError):
            ingest_csv(p, "nope", "b", header=True)

    def test_dataset_rejects_duplicates(self):
        with pytest.raises(DatasetError):
            Dataset(np.array([[0.0, 0.0], [0.0, 0.0]]))


class TestSynthPoints:
    def test_single_point(self):
        assert len(synth_points(1, seed=5)) == 1

    @pytest.mark.parametrize("dist", ["uniform", "gaussian-clusters"])
    def test_seeded_and_distinct(self, dist):
        a, b = synth_points(5000, dist, seed=9), synth_points(5000, dist, seed=9)
        assert np.array_equal(a.points, b.points)
        assert len(np.unique(a.points, axis=0)) == 5000
        assert not np.array_equal(a.points, synth_points(5000, dist, seed=10).points)

    def test_unknown_distribution(self):
        with pytest.raises(DatasetError):
            synth_points(10, "zipf")


class TestWorkloadSpec:
    def test_target_counts(self):
        assert WorkloadSpec(0.00001).target_count(2_000_000) == 20
        assert WorkloadSpec(0.00005).target_count(2_000_000) == 100

    def test_below_one_result(self):
        with pytest.raises(ValueError):
            WorkloadSpec(0.0001).target_count(1000)

    @pytest.mark.parametrize("kw", [{"selectivity": 0}, {"selectivity": 1.5},
                                    {"selectivity": 0.1, "alpha_targets": (0.5, 0.1)},
                                    {"selectivity": 0.1, "alpha_targets": (0.0,)},
                                    {"selectivity": 0.1, "query_count": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            WorkloadSpec(**kw)

    def test_match_bucket(self):
        t = (0.1, 0.25, 0.5, 0.75, 1.0)
        assert match_bucket(0.5, t, 0.05) == 2
        assert match_bucket(0.2, t, 0.05) == 1
        assert match_bucket(0.7, t, 0.05) == 3
        assert match_bucket(0.6, t, 0.05) is None
        assert match_bucket(1 / 3, t, 0.05) is None


class TestGrowQuery:
    def test_holds_k_points(self):
        rng = np.random.default_rng(0)
        pts = rng.random((2000, 2))
        for k in (1, 5, 20, 100):
            for aspect in (1 / 16, 1.0, 7.5):
                q = grow_query(pts, pts[17], k, aspect)
                inside = ((pts[:, 0] >= q.xmin) & (pts[:, 0] <= q.xmax)
                          & (pts[:, 1] >= q.ymin) & (pts[:, 1] <= q.ymax)).sum()
                assert inside >= k
                assert q.width == pytest.approx(aspect * q.height) or q.width == 0


class TestSynthQueries:
    def test_every_query_relabels(self, small_setup):
        ds, tree, spec, qs = small_setup
        assert qs
        k = spec.target_count(len(ds))
        for q in qs:
            fresh = label_query(tree, q.rect, len(ds))
            assert (fresh.alpha, fresh.tn, fresh.vn, fresh.true_leaf_ids) == \
                (q.alpha, q.tn, q.vn, q.true_leaf_ids)
            assert q.alpha == q.tn / q.vn
            assert abs(q.alpha - q.alpha_target) <= spec.alpha_tolerance + 1e-12
            assert 0.8 * k <= q.selectivity_actual * len(ds) <= 1.2 * k

    def test_all_buckets_covered_and_ordered(self, small_setup):
        _, _, spec, qs = small_setup
        targets = [q.alpha_target for q in qs]
        assert targets == sorted(targets)
        assert set(targets) == set(spec.alpha_targets)
        assert all(targets.count(t) <= spec.query_count for t in spec.alpha_targets)

    def test_regeneration_identical(self, small_setup):
        ds, tree, spec, qs = small_setup
        again = synth_queries(ds, tree, spec)
        assert [q.rect for q in again] == [q.rect for q in qs]

    def test_exhausted_budget_raises_when_empty(self):
        ds = synth_points(400, seed=1)
        tree = build_rtree(ds.points, RTreeConfig(400))  # a single leaf: every alpha is 1
        spec = WorkloadSpec(0.01, query_count=5, alpha_targets=(0.1,), attempt_factor=2)
        with pytest.raises(WorkloadError):
            synth_queries(ds, tree, spec)

    def test_partial_fill_warns(self, caplog):
        caplog.set_level("WARNING")
        ds = synth_points(400, seed=1)
        tree = build_rtree(ds.points, RTreeConfig(400))
        spec = WorkloadSpec(0.01, query_count=5, alpha_targets=(0.1, 1.0), attempt_factor=2)
        qs = synth_queries(ds, tree, spec)
        assert len(qs) == 5 and all(q.alpha == 1.0 for q in qs)
        assert "exhausted" in caplog.text

    def test_persistence_round_trip(self, small_setup, tmp_path):
        qs = small_setup[3]
        save_workload(tmp_path / "w.jsonl", qs)
        back = load_workload(tmp_path / "w.jsonl")
        assert back == qs
        save_workload(tmp_path / "v.jsonl", back)
        assert (tmp_path / "w.jsonl").read_bytes() == (tmp_path / "v.jsonl").read_bytes()


class TestTrainingSets:
    def test_worked_example_one_hot(self):
        # true leaves {2}, {5, 7}, {0, 1} over 8 leaves, 0-based
        qs = [_lq(0.5, (2,)), _lq(1.0, (5, 7)), _lq(1.0, (0, 1))]
        ex = make_multilabel_training(qs, 8)
        assert [e.bits() for e in ex] == ["00100000", "00000101", "11000000"]
        assert [e.label_ids for e in ex] == [(2,), (5, 7), (0, 1)]
        assert ex[0].features == (0, 0, 1, 1)

    @settings(max_examples=100)
    @given(st.integers(1, 64).flatmap(
        lambda n: st.tuples(st.just(n), st.sets(st.integers(0, n - 1), min_size=1))))
    def test_one_hot_round_trip(self, data):
        n, ids = data
        v = encode_labels(ids, n)
        assert len(v) == n and set(np.flatnonzero(v).tolist()) == ids

    def test_out_of_range_id(self):
        with pytest.raises(ValueError):
            encode_labels([8], 8)

    def test_zero_true_leaves_skipped(self, caplog):
        q = LabeledQuery(Rect(0, 0, 1, 1), 0.0, 0, 3, (), 0.0)
        assert make_multilabel_training([q, _lq(1.0)], 4).__len__() == 1
        assert "skipped 1" in caplog.text

    def test_empty(self):
        assert make_multilabel_training([], 8) == []

    def test_binary_labels(self):
        ex = make_binary_training([_lq(0.75), _lq(1.0), _lq(0.1), _lq(0.76)], 0.75)
        assert [e.label for e in ex] == [0, 1, 0, 1]
        assert all(e.label == 1 for e in make_binary_training([_lq(1.0)] * 5))

    def test_binary_partition(self, small_setup):
        qs = small_setup[3]
        ex = make_binary_training(qs, 0.75)
        zeros = sum(e.label == 0 for e in ex)
        assert zeros + sum(e.label == 1 for e in ex) == len(qs)
        assert zeros == sum(q.alpha <= 0.75 for q in qs)

    def test_stratified_split(self):
        ex = [BinaryExample((i, 0, i, 0), int(i % 4 == 0)) for i in range(100)]
        tr, te = stratified_split(ex, 0.2, seed=1)
        assert len(te) == 20 and len(tr) == 80
        assert sum(e.label for e in te) == 5
        assert {e.features for e in tr} | {e.features for e in te} == {e.features for e in ex}
        assert stratified_split(ex, 0.2, seed=1) == (tr, te)
