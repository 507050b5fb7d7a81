import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slidesearch.dbformat import (
    EntryTable,
    header_size,
    read_db,
    record_dtype,
    write_db,
)
from slidesearch.errors import (
    DimMismatchError,
    FormatError,
    ValidationError,
)
from slidesearch.index import (
    HashIndex,
    IndexParams,
    KdTree,
    ShardData,
    brute_force_search,
    build_shards,
    load_db,
    measure_recall,
    save_db,
    storage_stats,
)


def make_table(n, dim=128, seed=0, duplicate_half=False):
    rng = np.random.default_rng(seed)
    vecs = rng.standard_normal((n, dim)).astype(np.float32)
    if duplicate_half:
        half = n // 2
        vecs[:half] = vecs[half:2 * half]
    return EntryTable(
        patch_id=np.arange(n) // 8,
        slide_id=np.arange(n) % 5,
        mag=np.zeros(n, np.uint8),
        orientation=np.arange(n) % 8,
        x=np.zeros(n), y=np.zeros(n),
        side=np.full(n, 300),
        vecs=vecs,
    ).canonical_order()


def whole_shard(table):
    return ShardData.from_table(table, np.arange(len(table)))


def clustered_table(n_clusters, per_cluster, noise, seed=0, dim=128):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_clusters, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    n = n_clusters * per_cluster
    vecs = np.repeat(centers, per_cluster, axis=0) \
        + noise * rng.standard_normal((n, dim))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return EntryTable(
        patch_id=np.arange(n) // 8, slide_id=np.zeros(n),
        mag=np.zeros(n, np.uint8), orientation=np.arange(n) % 8,
        x=np.zeros(n), y=np.zeros(n), side=np.full(n, 300),
        vecs=vecs.astype(np.float32),
    ).canonical_order()


class TestKdBuild:
    def test_small_input_single_leaf(self):
        t = make_table(40)
        tree = KdTree(whole_shard(t))
        assert tree.depth() == 0 and len(tree.leaves()) == 1

    def test_balanced_median_splits(self):
        # 2560 = 40 * 2^6: median splits hit the leaf target exactly at
        # the depth limit
        t = make_table(2560, seed=3)
        tree = KdTree(whole_shard(t))
        assert tree.depth() <= 6
        leaves = tree.leaves()
        assert all(len(rows) >= 1 for rows in leaves)
        assert sum(len(rows) for rows in leaves) == 2560

    def test_identical_embeddings_single_leaf(self):
        n = 100
        t = EntryTable(np.arange(n) // 8, np.zeros(n),
                       np.zeros(n, np.uint8), np.arange(n) % 8,
                       np.zeros(n), np.zeros(n), np.full(n, 300),
                       np.ones((n, 16), np.float32))
        tree = KdTree(whole_shard(t))
        assert len(tree.leaves()) == 1

    def test_deep_leaves_exceed_target(self):
        t = make_table(40 * 128, seed=4)  # needs depth 7 to reach 40
        tree = KdTree(whole_shard(t))
        assert tree.depth() == 6
        assert max(len(rows) for rows in tree.leaves()) > 40

    def test_empty_rejected(self):
        t = make_table(8).take(np.arange(0))
        with pytest.raises(ValidationError):
            KdTree(ShardData.from_table(t, np.arange(0)))


class TestKdSearch:
    def test_self_match_distance_zero(self):
        t = make_table(500, seed=5)
        tree = KdTree(whole_shard(t))
        rows, d2 = tree.search(t.vecs[123], 1)
        assert rows[0] == 123 and d2[0] == 0.0

    def test_m_larger_than_n_returns_all_sorted(self):
        t = make_table(64, seed=6)
        tree = KdTree(whole_shard(t))
        q = np.zeros(128, np.float32)
        rows, d2 = tree.search(q, 1000)
        assert len(rows) == 64
        assert np.all(np.diff(d2) >= 0)

    def test_matches_oracle_at_scale(self):
        t = make_table(1000, seed=7)
        tree = KdTree(whole_shard(t))
        rng = np.random.default_rng(8)
        for _ in range(100):
            q = rng.standard_normal(128).astype(np.float32)
            rows, d2 = tree.search(q, 5)
            orows, od2 = brute_force_search(t, q, 5)
            assert np.array_equal(rows, orows)
            assert np.array_equal(d2, od2)

    def test_duplicates_and_ties_match_oracle(self):
        t = make_table(400, seed=9, duplicate_half=True)
        tree = KdTree(whole_shard(t))
        rng = np.random.default_rng(10)
        for _ in range(30):
            q = t.vecs[int(rng.integers(400))]
            rows, d2 = tree.search(q, 9)
            orows, od2 = brute_force_search(t, q, 9)
            assert np.array_equal(rows, orows)
            assert np.array_equal(d2, od2)

    @given(n=st.integers(2, 120), m=st.integers(1, 12),
           seed=st.integers(0, 100))
    @settings(max_examples=40, deadline=None)
    def test_oracle_equivalence_property(self, n, m, seed):
        t = make_table(n, dim=8, seed=seed)
        tree = KdTree(whole_shard(t), max_depth=4, leaf_target=5)
        q = np.random.default_rng(seed + 1).standard_normal(8) \
            .astype(np.float32)
        rows, d2 = tree.search(q, m)
        orows, od2 = brute_force_search(t, q, m)
        assert np.array_equal(rows, orows)
        assert np.array_equal(d2, od2)

    def test_dim_mismatch(self):
        t = make_table(50)
        tree = KdTree(whole_shard(t))
        with pytest.raises(DimMismatchError):
            tree.search(np.zeros(64, np.float32), 5)


class TestHashIndex:
    def test_identical_key_self_match(self):
        t = make_table(512, seed=11)
        hi = HashIndex(whole_shard(t), bits=16, seed=0)
        rows, d2 = hi.search(t.vecs[77], 1)
        assert rows[0] == 77 and d2[0] == 0.0

    def test_full_probe_equals_brute_force(self):
        t = make_table(300, dim=16, seed=12)
        hi = HashIndex(whole_shard(t), bits=8, seed=1, probe_radius=8)
        rng = np.random.default_rng(13)
        for _ in range(40):
            q = rng.standard_normal(16).astype(np.float32)
            rows, d2 = hi.search(q, 5)
            orows, od2 = brute_force_search(t, q, 5)
            assert np.array_equal(rows, orows)
            assert np.array_equal(d2, od2)

    def test_recall_floor_on_clustered_benchmark(self):
        # dense near-duplicate regime (what pushes a shard over the
        # density threshold in the first place)
        t = clustered_table(100, 100, noise=0.004, seed=14)
        hi = HashIndex(whole_shard(t), bits=16, seed=0, probe_radius=1)
        rng = np.random.default_rng(15)
        idx = rng.choice(len(t), 150, replace=False)
        qs = t.vecs[idx].astype(np.float64) \
            + 0.004 * rng.standard_normal((150, 128))
        qs /= np.linalg.norm(qs, axis=1, keepdims=True)
        recall = measure_recall(hi, t, qs.astype(np.float32), m=5)
        assert recall >= 0.9

    def test_partition_into_buckets(self):
        t = make_table(777, seed=16)
        hi = HashIndex(whole_shard(t), bits=16, seed=0)
        total = sum(len(rows) for rows in hi.bucket_rows)
        assert total == 777
        all_rows = np.sort(np.concatenate(hi.bucket_rows))
        assert np.array_equal(all_rows, np.arange(777))


class TestShards:
    def test_small_shards_use_kd(self):
        t = make_table(1000, seed=17)
        s = build_shards(t, "reference-v1",
                         IndexParams(n_shards=4, density_threshold=100_000))
        assert [i.structure for i in s.info.shards] == ["kd"] * 4

    def test_dense_shards_use_hash(self):
        n = 4000
        t = make_table(n, dim=4, seed=18)
        s = build_shards(t, "reference-v1",
                         IndexParams(n_shards=2, density_threshold=1000))
        assert [i.structure for i in s.info.shards] == ["hash", "hash"]

    def test_shard_counts_partition_entries(self):
        t = make_table(1001, seed=19)
        s = build_shards(t, "reference-v1", IndexParams(n_shards=3))
        assert sum(i.count for i in s.info.shards) == 1001

    def test_multishard_exact_search_matches_oracle(self):
        t = make_table(2000, seed=20)
        s = build_shards(t, "reference-v1", IndexParams(n_shards=5))
        rng = np.random.default_rng(21)
        for _ in range(25):
            q = rng.standard_normal(128).astype(np.float32)
            rows, d2 = s.search(q, 7)
            orows, od2 = brute_force_search(s.table, q, 7)
            assert np.array_equal(rows, orows)
            assert np.array_equal(d2, od2)

    def test_parallel_equals_serial(self):
        t = make_table(3000, seed=22)
        s = build_shards(t, "reference-v1", IndexParams(n_shards=6))
        rng = np.random.default_rng(23)
        for _ in range(10):
            q = rng.standard_normal(128).astype(np.float32)
            r1, d1 = s.search(q, 9, threads=1)
            r2, d2 = s.search(q, 9, threads=4)
            assert np.array_equal(r1, r2) and np.array_equal(d1, d2)

    def test_distances_monotone(self):
        t = make_table(600, seed=24)
        s = build_shards(t, "reference-v1", IndexParams(n_shards=2))
        q = np.random.default_rng(25).standard_normal(128) \
            .astype(np.float32)
        _, d2 = s.search(q, 50)
        assert np.all(np.diff(d2) >= 0)

    def test_duplicate_entries_rejected(self):
        t = make_table(16)
        dup = t.take(np.r_[np.arange(16), 0])
        with pytest.raises(ValidationError):
            build_shards(dup, "reference-v1")


class TestPersistence:
    def test_round_trip_bitwise_and_search_identical(self, tmp_path):
        t = make_table(888, seed=26)
        s = build_shards(t, "reference-v1", IndexParams(n_shards=3))
        path = tmp_path / "db.bin"
        save_db(s, path)
        first = path.read_bytes()
        save_db(s, path)
        assert path.read_bytes() == first  # deterministic serialization

        s2 = load_db(path, IndexParams(n_shards=3))
        q = np.random.default_rng(27).standard_normal(128) \
            .astype(np.float32)
        r1, d1 = s.search(q, 10)
        r2, d2 = s2.search(q, 10)
        assert np.array_equal(d1, d2)
        assert np.array_equal(s.table.patch_id[r1], s2.table.patch_id[r2])
        assert np.array_equal(s.table.orientation[r1],
                              s2.table.orientation[r2])

    def test_corrupted_magic_rejected(self, tmp_path):
        t = make_table(24)
        s = build_shards(t, "reference-v1")
        path = tmp_path / "db.bin"
        save_db(s, path)
        raw = bytearray(path.read_bytes())
        raw[0] = ord(b"X")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_db(path)

    def test_truncated_file_rejected(self, tmp_path):
        t = make_table(24)
        save_db(build_shards(t, "reference-v1"), tmp_path / "db.bin")
        raw = (tmp_path / "db.bin").read_bytes()
        (tmp_path / "db.bin").write_bytes(raw[:-10])
        with pytest.raises(FormatError):
            load_db(tmp_path / "db.bin")

    def test_file_size_arithmetic(self, tmp_path):
        t = make_table(56, dim=128)
        path = tmp_path / "db.bin"
        write_db(path, t, "reference-v1")
        rec = record_dtype(128).itemsize
        assert rec == 24 + 128 * 4
        assert path.stat().st_size == header_size("reference-v1") + 56 * rec

    def test_header_fields_validated(self, tmp_path):
        t = make_table(8, dim=32)
        path = tmp_path / "db.bin"
        write_db(path, t, "custom")
        header, back = read_db(path)
        assert (header.dim, header.embedder_name, header.count) \
            == (32, "custom", 8)
        assert np.array_equal(back.vecs, t.canonical_order().vecs)
        with pytest.raises(DimMismatchError):
            load_db(path, expected_dim=128)
        with pytest.raises(ValidationError):
            load_db(path, expected_embedder="reference-v1")

    def test_empty_db_round_trip(self, tmp_path):
        t = EntryTable.empty(128)
        path = tmp_path / "db.bin"
        write_db(path, t, "reference-v1")
        header, back = read_db(path)
        assert header.count == 0 and len(back) == 0


class TestStorageStats:
    def test_empty_db_zero_payload(self):
        empty = build_shards_empty()
        stats = storage_stats(empty)
        assert stats["embedding_payload_bytes"] == 0

    def test_single_patch_payload_arithmetic(self):
        t = make_table(8)  # one patch, 8 orientations
        s = build_shards(t, "reference-v1")
        stats = storage_stats(s)
        assert stats["embedding_payload_bytes"] == 8 * 128 * 4 == 4096
        assert stats["record_metadata_bytes"] == 8 * 24
        assert stats["embedding_file_bytes"] == \
            header_size("reference-v1") + 8 * record_dtype(128).itemsize

    def test_ratio_reported_not_asserted(self, tiny_store, tiny_db):
        store, _ = tiny_store
        stats = storage_stats(tiny_db, store=store)
        assert stats["image_bytes"] > 0
        assert 0 < stats["overhead_ratio"] < 1


def build_shards_empty():
    return build_shards(EntryTable.empty(128), "reference-v1")
