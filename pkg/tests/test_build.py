import numpy as np
import pytest

from slidesearch.build import embed_patch_set, load_sidecar, \
    write_sidecar
from slidesearch.core import LabelSet, Magnification, PatchRecord
from slidesearch.dataset import extract_patches, sample_balanced
from slidesearch.dataset.extract import balancing_class
from slidesearch.embedder import ReferenceEmbedder
from slidesearch.errors import DataError


class TestEmbedPatchSet:
    def test_parallel_bitwise_equals_serial(self, tiny_store,
                                            tiny_patches):
        store, _ = tiny_store
        patches = tiny_patches[:6]
        emb = ReferenceEmbedder()
        serial = embed_patch_set(store, patches, emb, threads=1)
        parallel = embed_patch_set(store, patches, emb, threads=4)
        assert np.array_equal(serial.vecs, parallel.vecs)
        assert np.array_equal(serial.patch_id, parallel.patch_id)
        assert np.array_equal(serial.orientation, parallel.orientation)

    def test_empty_rejected(self, tiny_store):
        store, _ = tiny_store
        with pytest.raises(DataError):
            embed_patch_set(store, [], ReferenceEmbedder())


class TestSidecar:
    def test_round_trip(self, tmp_path, tiny_patches):
        db = tmp_path / "db.bin"
        write_sidecar(db, tiny_patches[:10])
        back = load_sidecar(db)
        assert len(back) == 10
        assert back[tiny_patches[0].patch_id] == tiny_patches[0]

    def test_missing_sidecar_empty(self, tmp_path):
        assert load_sidecar(tmp_path / "nope.bin") == {}


class TestExtractionStride:
    def test_overlapping_stride_for_serving(self, tiny_store):
        store, anns = tiny_store
        dense = extract_patches(store, anns, Magnification.M40X,
                                side_px=256, stride=128)
        sparse = extract_patches(store, anns, Magnification.M40X,
                                 side_px=256)
        assert len(dense) > len(sparse)
        xs = sorted({p.x for p in dense})
        assert any(b - a == 128 for a, b in zip(xs, xs[1:]))


class TestFeatureByOrganBalancing:
    @staticmethod
    def patch(pid, feature, organ):
        return PatchRecord(
            patch_id=pid, slide_id=0, magnification=Magnification.M40X,
            x=0, y=0, side_px=300,
            labels=LabelSet(histologic_features={feature}, organ=organ))

    def test_class_key_pairs_feature_with_organ(self):
        p = self.patch(0, "fat", "breast")
        assert balancing_class(p, "feature_x_organ") == ("fat", "breast")
        no_organ = PatchRecord(
            patch_id=1, slide_id=0, magnification=Magnification.M40X,
            x=0, y=0, side_px=300,
            labels=LabelSet(histologic_features={"fat"}))
        assert balancing_class(no_organ, "feature_x_organ") is None

    def test_balances_per_pair(self):
        patches = []
        pid = 0
        for feature in ("fat", "nerve"):
            for organ in ("breast", "colon"):
                for _ in range(8):
                    patches.append(self.patch(pid, feature, organ))
                    pid += 1
        out = sample_balanced(patches, 5, "feature_x_organ", seed=3)
        assert len(out) == 4 * 5
        counts = {}
        for p in out:
            key = balancing_class(p, "feature_x_organ")
            counts[key] = counts.get(key, 0) + 1
        assert set(counts.values()) == {5}
