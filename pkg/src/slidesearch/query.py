"""End-to-end query pipeline.

A query is embedded once, unrotated; orientation matching happens on the
database side because every patch is stored under all 8 orientations. Raw
hits come back oversampled, then collapse to one orientation per patch,
pass the same-slide minimum-separation filter, and truncate to k. If the
filters eat into k, the outcome says so instead of padding.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import MAG_FROM_CODE, Magnification, Orientation
from .dataset.store import SlideStore
from .embedder import get_embedder, preprocess_query, resize_to_224
from .errors import DataError, ValidationError
from .index.shards import ShardSet


@dataclass(frozen=True)
class RegionSource:
    """Rectangular query region: base-px origin, level-px dimensions."""

    slide_id: int
    x: int
    y: int
    w: int
    h: int
    mag: Magnification

    def __post_init__(self):
        if not (200 <= self.w <= 400 and 200 <= self.h <= 400):
            raise ValidationError(
                f"query region must be between 200 and 400 pixels in height "
                f"and width, got {self.w}x{self.h}"
            )


@dataclass
class QuerySpec:
    region: RegionSource | None = None
    pixels: np.ndarray | None = None
    pixels_slide_id: int | None = None  # raw-query provenance, if known
    k: int = 5
    oversample_factor: int = 5
    min_separation_px: float = 1000.0
    exclude_self: bool = True
    exclude_query_slide: bool = False
    exclude_patch_ids: tuple = ()

    def __post_init__(self):
        if (self.region is None) == (self.pixels is None):
            raise ValidationError(
                "query needs exactly one source: a region or raw pixels"
            )
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.oversample_factor < 1:
            raise ValidationError("oversample_factor must be >= 1")
        if self.min_separation_px < 0:
            raise ValidationError("min_separation_px must be >= 0")

    @property
    def source_slide_id(self) -> int | None:
        if self.region is not None:
            return self.region.slide_id
        return self.pixels_slide_id


@dataclass(frozen=True)
class Hit:
    patch_id: int
    slide_id: int
    mag: Magnification
    x: int
    y: int
    side_px: int
    orientation: Orientation
    d2: float

    def base_center(self) -> tuple[float, float]:
        half = self.side_px * self.mag.downsample / 2
        return (self.x + half, self.y + half)


@dataclass(frozen=True)
class QueryResult:
    rank: int
    patch_id: int
    slide_id: int
    magnification: Magnification
    x: int
    y: int
    side_px: int
    best_orientation: Orientation
    distance: float | None
    provenance: str = "engine"

    def to_json(self) -> dict:
        return {
            "rank": self.rank,
            "patch_id": self.patch_id,
            "slide_id": self.slide_id,
            "magnification": self.magnification.name,
            "x": self.x,
            "y": self.y,
            "side_px": self.side_px,
            "best_orientation": self.best_orientation.name,
            "distance": self.distance,
            "provenance": self.provenance,
        }


@dataclass
class QueryOutcome:
    results: list[QueryResult]
    exhausted: bool = False
    shard_ms: list[float] = field(default_factory=list)


def dedup_orientations(hits: list[Hit]) -> list[Hit]:
    """Keep the best orientation per patch. Input order is the canonical
    (distance, patch_id, orientation) order, so 'first seen' is exactly
    'minimum distance, ties to the lower orientation code'."""
    seen: set[int] = set()
    out = []
    for h in hits:
        if h.patch_id not in seen:
            seen.add(h.patch_id)
            out.append(h)
    return out


def diversity_filter(hits: list[Hit],
                     min_separation_px: float = 1000.0) -> list[Hit]:
    """Greedy rank-order acceptance: a hit is dropped when its base center
    is closer than the minimum separation to an already accepted hit on
    the same slide. Hits on different slides never conflict."""
    if min_separation_px <= 0:
        return list(hits)
    accepted: list[Hit] = []
    centers: dict[int, list[tuple[float, float]]] = {}
    for h in hits:
        cx, cy = h.base_center()
        ok = True
        for (ax, ay) in centers.get(h.slide_id, ()):
            if math.hypot(cx - ax, cy - ay) < min_separation_px:
                ok = False
                break
        if ok:
            accepted.append(h)
            centers.setdefault(h.slide_id, []).append((cx, cy))
    return accepted


class QueryEngine:
    """Stateless pipeline over an immutable shard set; one instance serves
    any number of concurrent queries."""

    def __init__(self, shards: ShardSet, store: SlideStore | None = None,
                 embedder=None, threads: int = 1):
        self.shards = shards
        self.store = store
        self.embedder = embedder or get_embedder(shards.info.embedder_name)
        self.threads = threads
        desc = self.embedder.descriptor
        if desc.name != shards.info.embedder_name:
            raise ValidationError(
                f"embedder {desc.name!r} does not match database "
                f"{shards.info.embedder_name!r}"
            )
        if desc.dim != shards.dim:
            raise ValidationError(
                f"embedder dim {desc.dim} != database dim {shards.dim}"
            )

    def embed_query(self, spec: QuerySpec) -> np.ndarray:
        if spec.region is not None:
            if self.store is None:
                raise ValidationError("region queries need a slide store")
            r = spec.region
            pixels = self.store.read_region(
                r.slide_id, r.mag, r.x, r.y, r.w, r.h
            )
            return self.embedder.embed_preprocessed(preprocess_query(pixels))
        return self.embedder.embed_preprocessed(resize_to_224(spec.pixels))

    def query(self, spec: QuerySpec) -> QueryOutcome:
        return self.query_embedding(self.embed_query(spec), spec)

    def query_embedding(self, q: np.ndarray,
                        spec: QuerySpec) -> QueryOutcome:
        """Search + filters for an already embedded query."""
        shard_ms: list[float] = []
        m_raw = spec.k * spec.oversample_factor
        rows, d2 = self.shards.search(q, m_raw, threads=self.threads,
                                      shard_timings=shard_ms)
        hits = self._materialize(rows, d2)
        hits = dedup_orientations(hits)
        hits = self._exclude(hits, spec)
        hits = diversity_filter(hits, spec.min_separation_px)
        results = [
            QueryResult(
                rank=i + 1,
                patch_id=h.patch_id,
                slide_id=h.slide_id,
                magnification=h.mag,
                x=h.x,
                y=h.y,
                side_px=h.side_px,
                best_orientation=h.orientation,
                distance=math.sqrt(h.d2),
                provenance="engine",
            )
            for i, h in enumerate(hits[:spec.k])
        ]
        return QueryOutcome(results=results,
                            exhausted=len(hits) < spec.k,
                            shard_ms=shard_ms)

    def _materialize(self, rows: np.ndarray, d2: np.ndarray) -> list[Hit]:
        t = self.shards.table
        return [
            Hit(
                patch_id=int(t.patch_id[r]),
                slide_id=int(t.slide_id[r]),
                mag=MAG_FROM_CODE[int(t.mag[r])],
                x=int(t.x[r]),
                y=int(t.y[r]),
                side_px=int(t.side[r]),
                orientation=Orientation(int(t.orientation[r])),
                d2=float(d),
            )
            for r, d in zip(rows, d2)
        ]

    def _exclude(self, hits: list[Hit], spec: QuerySpec) -> list[Hit]:
        out = hits
        if spec.exclude_patch_ids:
            banned = set(spec.exclude_patch_ids)
            out = [h for h in out if h.patch_id not in banned]
        if spec.exclude_self and spec.region is not None:
            r = spec.region
            out = [
                h for h in out
                if not (h.slide_id == r.slide_id and h.mag == r.mag
                        and h.x == r.x and h.y == r.y
                        and h.side_px == r.w == r.h)
            ]
        if spec.exclude_query_slide and spec.source_slide_id is not None:
            out = [h for h in out if h.slide_id != spec.source_slide_id]
        return out


def random_results(shards: ShardSet, spec: QuerySpec,
                   seed: int) -> QueryOutcome:
    """Uniform selection without replacement, still subject to the spec's
    exclusions and diversity rule. Distances stay unset."""
    n = shards.n_patches
    if n == 0:
        raise DataError("database holds no patches")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    r0 = shards.patch_rows()
    t = shards.table
    banned = set(spec.exclude_patch_ids)
    chosen: list[Hit] = []
    centers: dict[int, list[tuple[float, float]]] = {}
    for i in order:
        row = int(r0[i])
        h = Hit(
            patch_id=int(t.patch_id[row]),
            slide_id=int(t.slide_id[row]),
            mag=MAG_FROM_CODE[int(t.mag[row])],
            x=int(t.x[row]),
            y=int(t.y[row]),
            side_px=int(t.side[row]),
            orientation=Orientation.R0,
            d2=0.0,
        )
        if h.patch_id in banned:
            continue
        if spec.exclude_query_slide \
                and h.slide_id == spec.source_slide_id:
            continue
        if spec.min_separation_px > 0:
            cx, cy = h.base_center()
            if any(math.hypot(cx - ax, cy - ay) < spec.min_separation_px
                   for (ax, ay) in centers.get(h.slide_id, ())):
                continue
            centers.setdefault(h.slide_id, []).append((cx, cy))
        chosen.append(h)
        if len(chosen) == spec.k:
            break
    if len(chosen) < spec.k:
        raise DataError(
            f"database too small for k={spec.k} random results "
            f"after filtering (got {len(chosen)})"
        )
    results = [
        QueryResult(
            rank=i + 1,
            patch_id=h.patch_id,
            slide_id=h.slide_id,
            magnification=h.mag,
            x=h.x,
            y=h.y,
            side_px=h.side_px,
            best_orientation=h.orientation,
            distance=None,
            provenance="random",
        )
        for i, h in enumerate(chosen)
    ]
    return QueryOutcome(results=results, exhausted=False)


def latency_bench(engine: QueryEngine, queries: np.ndarray,
                  spec: QuerySpec | None = None) -> dict:
    """Wall-clock latency over prepared query embeddings (>= 100 for the
    percentiles to mean much)."""
    if len(engine.shards) == 0:
        raise DataError("nothing to search: database is empty")
    if len(queries) == 0:
        raise ValidationError("no queries supplied")
    spec = spec or QuerySpec(pixels=np.zeros((1, 1, 3), np.uint8),
                             exclude_self=False)
    lat = np.empty(len(queries))
    shard_ms: list[float] = []
    for i, q in enumerate(queries):
        t0 = time.perf_counter()
        out = engine.query_embedding(np.asarray(q, dtype=np.float32), spec)
        lat[i] = (time.perf_counter() - t0) * 1000.0
        shard_ms.extend(out.shard_ms)
    return {
        "queries": len(queries),
        "median_ms": float(np.median(lat)),
        "p95_ms": float(np.percentile(lat, 95)),
        "mean_ms": float(lat.mean()),
        "max_ms": float(lat.max()),
        "shard_median_ms": float(np.median(shard_ms) * 1000.0)
        if shard_ms else None,
        "shard_p95_ms": float(np.percentile(shard_ms, 95) * 1000.0)
        if shard_ms else None,
    }
