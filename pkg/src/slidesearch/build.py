"""Database build pipeline: read patches, expand orientations, embed,
shard, and persist (entry file + label sidecar + build report)."""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .core import Orientation, PatchRecord
from .dataset.extract import load_patch_table, save_patch_table
from .dataset.store import SlideStore
from .dbformat import EntryTable
from .embedder import embed_all_orientations, get_embedder
from .errors import DataError
from .index.shards import IndexParams, ShardSet, build_shards, storage_stats


def embed_patch_set(store: SlideStore, patches: list[PatchRecord],
                    embedder, threads: int = 1) -> EntryTable:
    """Embed all 8 orientations of every patch. Output order and values
    are independent of thread count."""
    if not patches:
        raise DataError("no patches to embed")

    def embed_one(p: PatchRecord) -> dict:
        pixels = store.read_region(p.slide_id, p.magnification,
                                   p.x, p.y, p.side_px, p.side_px)
        return embed_all_orientations(pixels, embedder,
                                      patch_id=p.patch_id).embeddings

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            oriented = list(pool.map(embed_one, patches, chunksize=8))
    else:
        oriented = [embed_one(p) for p in patches]
    return EntryTable.from_records(patches, oriented)


def build_database(store: SlideStore, patches: list[PatchRecord],
                   embedder_name: str = "reference-v1",
                   params: IndexParams | None = None,
                   threads: int = 1) -> ShardSet:
    embedder = get_embedder(embedder_name)
    table = embed_patch_set(store, patches, embedder, threads=threads)
    return build_shards(table, embedder_name, params)


def sidecar_path(db_path) -> Path:
    return Path(str(db_path) + ".labels.ndjson")


def report_path(db_path) -> Path:
    return Path(str(db_path) + ".build.json")


def write_sidecar(db_path, patches: list[PatchRecord]) -> None:
    save_patch_table(sidecar_path(db_path), patches)


def load_sidecar(db_path) -> dict[int, PatchRecord]:
    path = sidecar_path(db_path)
    if not path.is_file():
        return {}
    return {p.patch_id: p for p in load_patch_table(path)}


def write_build_report(db_path, shards: ShardSet,
                       patches: list[PatchRecord], store: SlideStore,
                       seed: int, extra: dict | None = None) -> dict:
    by_class = Counter()
    by_mag = Counter()
    for p in patches:
        by_mag[p.magnification.name] += 1
        for f in sorted(p.labels.histologic_features):
            by_class[f] += 1
        if p.labels.gleason:
            by_class[p.labels.gleason.value] += 1
    report = {
        "seed": seed,
        "embedder": shards.info.embedder_name,
        "dim": shards.dim,
        "entries": len(shards),
        "patches": shards.n_patches,
        "orientations_per_patch": len(Orientation),
        "counts_per_class": dict(sorted(by_class.items())),
        "counts_per_magnification": dict(sorted(by_mag.items())),
        "index_params": shards.info.params.to_json(),
        "shards": [
            {"structure": s.structure, "count": s.count}
            for s in shards.info.shards
        ],
        "storage": storage_stats(shards, store=store, db_path=db_path),
    }
    if extra:
        report.update(extra)
    with open(report_path(db_path), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return report
