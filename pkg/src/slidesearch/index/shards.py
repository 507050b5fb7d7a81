"""Sharded immutable index over an entry table.

Entries are assigned to shards by ``patch_id mod n_shards`` (all 8
orientations of a patch stay together). Dense shards — above the density
threshold — get a hash index; the rest get exact k-d trees. The on-disk
file stores only the portable entry records; index structures are rebuilt
deterministically on load from the same parameters.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from ..dbformat import (
    EntryTable,
    header_size,
    read_db,
    record_dtype,
    write_db,
)
from ..errors import DimMismatchError, ValidationError
from .hashindex import HashIndex
from .kdtree import KdTree
from .search_common import ShardData, canonical_top, check_query_dim


@dataclass(frozen=True)
class IndexParams:
    n_shards: int = 1
    max_depth: int = 6
    leaf_target: int = 40
    density_threshold: int = 100_000
    hash_bits: int = 16
    hash_probe_radius: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_shards < 1:
            raise ValidationError("n_shards must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "IndexParams":
        return cls(**d)


@dataclass
class ShardInfo:
    structure: str  # "kd" | "hash" | "empty"
    count: int


@dataclass
class DbInfo:
    embedder_name: str
    dim: int
    count: int
    params: IndexParams
    shards: list[ShardInfo] = field(default_factory=list)


class ShardSet:
    """Frozen after construction; safe for unlimited concurrent searches."""

    def __init__(self, table: EntryTable, embedder_name: str,
                 params: IndexParams):
        table.check_unique()
        self.table = table.canonical_order()
        self.params = params
        shard_of = self.table.patch_id % np.uint64(params.n_shards)
        self._indexes = []
        infos = []
        for s in range(params.n_shards):
            rows = np.nonzero(shard_of == s)[0]
            if len(rows) == 0:
                self._indexes.append(None)
                infos.append(ShardInfo("empty", 0))
                continue
            data = ShardData.from_table(self.table, rows)
            if len(rows) > params.density_threshold:
                idx = HashIndex(
                    data, bits=params.hash_bits,
                    seed=_shard_seed(params.seed, s),
                    probe_radius=params.hash_probe_radius,
                )
                infos.append(ShardInfo("hash", len(rows)))
            else:
                idx = KdTree(data, max_depth=params.max_depth,
                             leaf_target=params.leaf_target)
                infos.append(ShardInfo("kd", len(rows)))
            self._indexes.append(idx)
        self.info = DbInfo(
            embedder_name=embedder_name,
            dim=self.table.dim,
            count=len(self.table),
            params=params,
            shards=infos,
        )
        # unique patches, canonical order puts one R0 row per patch first
        self._r0_rows = np.nonzero(self.table.orientation == 0)[0]

    def __len__(self) -> int:
        return len(self.table)

    @property
    def dim(self) -> int:
        return self.table.dim

    @property
    def n_patches(self) -> int:
        return len(self._r0_rows)

    def patch_rows(self) -> np.ndarray:
        """Global rows of each patch's R0 entry, sorted by patch_id."""
        return self._r0_rows

    def patch_row_by_id(self, patch_id: int) -> int:
        ids = self.table.patch_id[self._r0_rows]
        i = int(np.searchsorted(ids, np.uint64(patch_id)))
        if i >= len(ids) or ids[i] != patch_id:
            raise ValidationError(f"unknown patch_id {patch_id}")
        return int(self._r0_rows[i])

    def search(self, q: np.ndarray, m: int, threads: int = 1,
               shard_timings: list | None = None
               ) -> tuple[np.ndarray, np.ndarray]:
        """m best entries across shards: (global rows, squared distances).
        The merge is a canonical sort, so results do not depend on shard
        scheduling."""
        if m <= 0:
            raise ValidationError("m must be positive")
        check_query_dim(q, self.dim)
        live = [idx for idx in self._indexes if idx is not None]
        if not live:
            return np.zeros(0, dtype=np.intp), np.zeros(0)

        def run(idx):
            if shard_timings is None:
                return idx.search(q, m)
            import time
            t0 = time.perf_counter()
            out = idx.search(q, m)
            shard_timings.append(time.perf_counter() - t0)
            return out

        if threads > 1 and len(live) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(run, live))
        else:
            parts = [run(idx) for idx in live]
        rows = np.concatenate([p[0] for p in parts])
        d2 = np.concatenate([p[1] for p in parts])
        sel = canonical_top(d2, self.table.patch_id[rows],
                            self.table.orientation[rows], m)
        return rows[sel], d2[sel]


def _shard_seed(seed: int, shard: int) -> int:
    return int(np.random.SeedSequence([seed, shard]).generate_state(1)[0])


def build_shards(table: EntryTable, embedder_name: str,
                 params: IndexParams | None = None) -> ShardSet:
    return ShardSet(table, embedder_name, params or IndexParams())


def save_db(shards: ShardSet, path) -> None:
    write_db(path, shards.table, shards.info.embedder_name)


def load_db(path, params: IndexParams | None = None,
            expected_embedder: str | None = None,
            expected_dim: int | None = None) -> ShardSet:
    header, table = read_db(path)
    if expected_dim is not None and header.dim != expected_dim:
        raise DimMismatchError(
            f"{path}: dim {header.dim} != expected {expected_dim}"
        )
    if expected_embedder is not None and header.embedder_name \
            != expected_embedder:
        raise ValidationError(
            f"{path}: embedder {header.embedder_name!r} != expected "
            f"{expected_embedder!r}"
        )
    return ShardSet(table, header.embedder_name, params or IndexParams())


def storage_stats(shards: ShardSet, store=None, db_path=None) -> dict:
    """Bytes consumed by embeddings vs. source tiles. Informational; the
    ratio depends entirely on image compression and sampling density."""
    n = len(shards.table)
    dim = shards.dim
    rec = record_dtype(dim).itemsize
    stats = {
        "entries": n,
        "patches": shards.n_patches,
        "embedding_payload_bytes": n * dim * 4,
        "record_metadata_bytes": n * (rec - dim * 4),
        "embedding_file_bytes": (
            header_size(shards.info.embedder_name) + n * rec
        ),
        "image_bytes": None,
        "overhead_ratio": None,
    }
    if db_path is not None and os.path.exists(db_path):
        stats["embedding_file_bytes"] = os.path.getsize(db_path)
    if store is not None:
        img = store.image_bytes()
        stats["image_bytes"] = img
        if img > 0:
            stats["overhead_ratio"] = stats["embedding_file_bytes"] / img
    return stats
