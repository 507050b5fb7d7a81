"""Drives the query engine over a query patch set to produce a
RetrievalRun for the evaluation metrics, for both the engine arm and the
uniform-random arm."""

from __future__ import annotations

import numpy as np

from .core import PatchRecord
from .dataset.store import SlideStore
from .evaluation import QueryRecord, RetrievalRun
from .errors import DataError
from .query import QueryEngine, QuerySpec, random_results

_DUMMY = np.zeros((1, 1, 3), dtype=np.uint8)


def _result_patches(outcome, db_patches_by_id: dict[int, PatchRecord]
                    ) -> list[PatchRecord]:
    out = []
    for r in outcome.results:
        p = db_patches_by_id.get(r.patch_id)
        if p is None:
            raise DataError(
                f"result patch {r.patch_id} missing from the label sidecar"
            )
        out.append(p)
    return out


def run_retrieval(engine: QueryEngine, store: SlideStore,
                  query_patches: list[PatchRecord],
                  db_patches_by_id: dict[int, PatchRecord],
                  k: int = 5, min_separation_px: float = 1000.0,
                  oversample_factor: int = 5,
                  exclude_self: bool = False) -> RetrievalRun:
    """Query the engine once per query patch.

    ``exclude_self`` only makes sense when the query patches share the
    database's id space (querying the database's own patches).
    """
    records = []
    for qp in query_patches:
        pixels = store.read_region(qp.slide_id, qp.magnification,
                                   qp.x, qp.y, qp.side_px, qp.side_px)
        spec = QuerySpec(
            pixels=pixels,
            pixels_slide_id=qp.slide_id,
            k=k,
            oversample_factor=oversample_factor,
            min_separation_px=min_separation_px,
            exclude_patch_ids=(qp.patch_id,) if exclude_self else (),
        )
        outcome = engine.query(spec)
        records.append(QueryRecord(
            query=qp,
            results=_result_patches(outcome, db_patches_by_id),
        ))
    return RetrievalRun(
        queries=records,
        config={
            "arm": "engine",
            "embedder": engine.shards.info.embedder_name,
            "db_entries": len(engine.shards),
            "db_patches": engine.shards.n_patches,
            "k": k,
            "queries": len(records),
        },
    )


def run_random(shards, query_patches: list[PatchRecord],
               db_patches_by_id: dict[int, PatchRecord],
               k: int = 5, seed: int = 0,
               min_separation_px: float = 1000.0) -> RetrievalRun:
    """Negative-control arm: uniform results, one draw per query."""
    records = []
    for i, qp in enumerate(query_patches):
        spec = QuerySpec(
            pixels_slide_id=qp.slide_id,
            pixels=_DUMMY,
            k=k,
            min_separation_px=min_separation_px,
            exclude_self=False,
        )
        outcome = random_results(shards, spec, seed=seed + i)
        records.append(QueryRecord(
            query=qp,
            results=_result_patches(outcome, db_patches_by_id),
            provenance="random",
        ))
    return RetrievalRun(
        queries=records,
        config={
            "arm": "random",
            "db_patches": shards.n_patches,
            "k": k,
            "seed": seed,
            "queries": len(records),
        },
    )
