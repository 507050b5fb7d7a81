"""Random-hyperplane hash index for dense shards.

Entries bucket by the sign pattern of ``bits`` seeded random unit
hyperplanes; search scans the query's bucket plus all buckets within the
probe Hamming radius and exact-sorts what it finds. Recall is measured,
not guaranteed — ``measure_recall`` reports it against the brute-force
oracle.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .search_common import (
    ShardData,
    brute_force_search,
    canonical_top,
    check_query_dim,
    squared_l2,
)

_POPCOUNT16 = np.array([bin(i).count("1") for i in range(1 << 16)],
                       dtype=np.uint8)


def _popcount(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint32)
    return (_POPCOUNT16[x & 0xFFFF].astype(np.uint16)
            + _POPCOUNT16[x >> 16])


class HashIndex:
    def __init__(self, data: ShardData, bits: int = 16, seed: int = 0,
                 probe_radius: int = 1):
        if not (1 <= bits <= 32):
            raise ValidationError("bits must be in 1..32")
        if probe_radius < 0:
            raise ValidationError("probe_radius must be >= 0")
        self.data = data
        self.bits = bits
        self.probe_radius = probe_radius
        rng = np.random.default_rng(np.random.SeedSequence([seed]))
        planes = rng.standard_normal((bits, data.dim))
        planes /= np.linalg.norm(planes, axis=1, keepdims=True)
        self.planes = planes
        keys = self._keys(data.vecs)
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        uniq, starts = np.unique(sorted_keys, return_index=True)
        self.bucket_keys = uniq
        self.bucket_rows = np.split(order, starts[1:])

    def _keys(self, vecs: np.ndarray) -> np.ndarray:
        # einsum keeps the per-row reduction order fixed, so an entry and a
        # query with identical components always land in the same bucket
        weights = np.left_shift(np.uint64(1), np.arange(self.bits, dtype=np.uint64))
        keys = np.zeros(vecs.shape[0], dtype=np.uint32)
        step = 8192  # bound the float64 working set
        for lo in range(0, vecs.shape[0], step):
            chunk = vecs[lo:lo + step].astype(np.float64)
            dots = np.einsum("nd,bd->nb", chunk, self.planes,
                             optimize=False)
            keys[lo:lo + step] = ((dots >= 0.0) * weights).sum(axis=1) \
                .astype(np.uint32)
        return keys

    def key_of(self, q: np.ndarray) -> int:
        check_query_dim(q, self.data.dim)
        q32 = np.asarray(q, dtype=np.float32)  # embeddings are f32 wire-wide
        return int(self._keys(q32[None, :])[0])

    def candidate_rows(self, q: np.ndarray,
                       probe_radius: int | None = None) -> np.ndarray:
        r = self.probe_radius if probe_radius is None else probe_radius
        key = self.key_of(q)
        hamming = _popcount(self.bucket_keys ^ np.uint32(key))
        hit = np.nonzero(hamming <= r)[0]
        if len(hit) == 0:
            return np.zeros(0, dtype=np.intp)
        return np.concatenate([self.bucket_rows[i] for i in hit])

    def search(self, q: np.ndarray, m: int,
               probe_radius: int | None = None
               ) -> tuple[np.ndarray, np.ndarray]:
        """Approximate m nearest: exact-L2-sorted entries from the scanned
        buckets; (global rows, squared distances)."""
        if m <= 0:
            raise ValidationError("m must be positive")
        q64 = check_query_dim(q, self.data.dim)
        rows = self.candidate_rows(q, probe_radius)
        if len(rows) == 0:
            return np.zeros(0, dtype=np.intp), np.zeros(0)
        d2 = squared_l2(self.data.vecs[rows], q64)
        sel = canonical_top(d2, self.data.patch_id[rows],
                            self.data.orientation[rows], m)
        return self.data.global_rows[rows[sel]], d2[sel]


def measure_recall(index, table, queries: np.ndarray, m: int = 5) -> float:
    """Mean fraction of the oracle's top-m rows that the index returns."""
    total = 0.0
    for q in queries:
        oracle_rows, _ = brute_force_search(table, q, m)
        got_rows, _ = index.search(q, m)
        total += len(np.intersect1d(oracle_rows, got_rows)) / max(
            len(oracle_rows), 1)
    return total / len(queries)
