"""HTTP facade: query endpoint, tile/patch serving, and the blinded
rating-study workflow.

Blinding contract: until a session is closed, study responses carry the
same fields with the same value shapes for both arms — only the images
differ. Distances, provenance, and coordinates never appear pre-close.
Ratings go to an append-only journal that is replayed on startup.
"""

from __future__ import annotations

import io
import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from PIL import Image

from .core import MAG_FROM_CODE, Magnification, PatchRecord
from .dataset.store import SlideStore
from .errors import DataError, ValidationError
from .index.shards import ShardSet
from .query import (
    QueryEngine,
    QueryOutcome,
    QuerySpec,
    RegionSource,
    random_results,
)

SCORING_SCALES = {
    "feature": (0, 100),
    "organ": (0, 100, "unclear"),
    "rubric": (0, 25, 50, 75, 100),
}
STUDY_RESULTS_PER_QUERY = 4


@dataclass
class StudyQuery:
    patch_id: int
    arm: str  # "engine" | "random"
    result_patch_ids: list[int]
    ratings: dict[int, object] = field(default_factory=dict)


@dataclass
class StudySession:
    session_id: str
    rater_id: str
    scoring: str
    seed: int
    queries: list[StudyQuery]
    closed: bool = False

    def next_unrated(self) -> int | None:
        for i, q in enumerate(self.queries):
            if len(q.ratings) < len(q.result_patch_ids):
                return i
        return None


class RatingJournal:
    """Append-only newline-delimited JSON; every write is flushed and
    fsynced so a crash loses at most the line being written."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with open(self.path, "a") as f:
                f.write(line + "\n")
                f.flush()
                os.fsync(f.fileno())

    def replay(self) -> list[dict]:
        if not self.path.is_file():
            return []
        out = []
        lines = self.path.read_text().split("\n")
        for i, line in enumerate(lines):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    break  # torn final line from a crash mid-write
                raise
        return out


class StudyManager:
    def __init__(self, engine: QueryEngine, store: SlideStore,
                 journal: RatingJournal):
        self.engine = engine
        self.store = store
        self.journal = journal
        self.sessions: dict[str, StudySession] = {}
        self._lock = threading.Lock()
        for rec in journal.replay():
            self._apply(rec, record=False)

    def _apply(self, rec: dict, record: bool = True) -> None:
        if record:
            self.journal.append(rec)
        kind = rec["type"]
        if kind == "session":
            qs = [
                StudyQuery(patch_id=q["patch_id"], arm=q["arm"],
                           result_patch_ids=q["result_patch_ids"])
                for q in rec["queries"]
            ]
            self.sessions[rec["session_id"]] = StudySession(
                session_id=rec["session_id"],
                rater_id=rec["rater_id"],
                scoring=rec["scoring"],
                seed=rec["seed"],
                queries=qs,
            )
        elif kind == "rating":
            s = self.sessions[rec["session_id"]]
            s.queries[rec["query_index"]].ratings[rec["result_index"]] = \
                rec["score"]
        elif kind == "close":
            self.sessions[rec["session_id"]].closed = True

    def create(self, rater_id: str, n_queries: int, scoring: str,
               seed: int, random_fraction: float = 0.25,
               min_separation_px: float = 1000.0) -> StudySession:
        if scoring not in SCORING_SCALES:
            raise ValidationError(
                f"scoring must be one of {sorted(SCORING_SCALES)}"
            )
        shards = self.engine.shards
        if shards.n_patches < n_queries:
            raise DataError("database smaller than the requested study")
        rng = np.random.default_rng(seed)
        chosen = rng.choice(shards.n_patches, size=n_queries, replace=False)
        arms = rng.random(n_queries) < random_fraction
        queries = []
        r0 = shards.patch_rows()
        t = shards.table
        for qi, (pi, is_random) in enumerate(zip(chosen, arms)):
            row = int(r0[pi])
            patch_id = int(t.patch_id[row])
            spec = QuerySpec(
                pixels=self._patch_pixels(row),
                pixels_slide_id=int(t.slide_id[row]),
                k=STUDY_RESULTS_PER_QUERY,
                min_separation_px=min_separation_px,
                exclude_patch_ids=(patch_id,),
            )
            if is_random:
                outcome = random_results(
                    shards, spec, seed=_derive_seed(seed, qi)
                )
            else:
                outcome = self.engine.query(spec)
            queries.append(StudyQuery(
                patch_id=patch_id,
                arm="random" if is_random else "engine",
                result_patch_ids=[r.patch_id for r in outcome.results],
            ))
        session = StudySession(
            session_id=uuid.uuid4().hex,
            rater_id=rater_id,
            scoring=scoring,
            seed=seed,
            queries=queries,
        )
        with self._lock:
            self._apply({
                "type": "session",
                "session_id": session.session_id,
                "rater_id": rater_id,
                "scoring": scoring,
                "seed": seed,
                "queries": [
                    {"patch_id": q.patch_id, "arm": q.arm,
                     "result_patch_ids": q.result_patch_ids}
                    for q in queries
                ],
            })
        return session

    def _patch_pixels(self, row: int) -> np.ndarray:
        t = self.engine.shards.table
        return self.store.read_region(
            int(t.slide_id[row]), MAG_FROM_CODE[int(t.mag[row])],
            int(t.x[row]), int(t.y[row]),
            int(t.side[row]), int(t.side[row]),
        )

    def get(self, session_id: str) -> StudySession:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise DataError(f"unknown session {session_id}") from None

    def rate(self, session_id: str, query_index: int, result_index: int,
             score) -> None:
        s = self.get(session_id)
        if s.closed:
            raise PermissionError("session is closed")
        if not (0 <= query_index < len(s.queries)):
            raise ValidationError("query_index out of range")
        q = s.queries[query_index]
        if not (0 <= result_index < len(q.result_patch_ids)):
            raise ValidationError("result_index out of range")
        if score not in SCORING_SCALES[s.scoring]:
            raise ValidationError(
                f"score {score!r} outside the {s.scoring} scale "
                f"{SCORING_SCALES[s.scoring]}"
            )
        with self._lock:
            self._apply({
                "type": "rating",
                "session_id": session_id,
                "query_index": query_index,
                "result_index": result_index,
                "score": score,
            })

    def close(self, session_id: str) -> dict:
        s = self.get(session_id)
        if not s.closed:
            with self._lock:
                self._apply({"type": "close", "session_id": session_id})
        per_arm: dict[str, list] = {"engine": [], "random": []}
        unclear: dict[str, int] = {"engine": 0, "random": 0}
        for q in s.queries:
            for score in q.ratings.values():
                if score == "unclear":
                    unclear[q.arm] += 1
                else:
                    per_arm[q.arm].append(float(score))
        return {
            "session_id": session_id,
            "scoring": s.scoring,
            "arms": [q.arm for q in s.queries],
            "aggregates": {
                arm: {
                    "ratings": len(vals) + unclear[arm],
                    "mean_score": (sum(vals) / len(vals)) if vals else None,
                    "unclear": unclear[arm],
                }
                for arm, vals in per_arm.items()
            },
        }


def _derive_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])


def create_app(store: SlideStore, shards: ShardSet,
               labels_by_id: dict[int, PatchRecord] | None = None,
               journal_path=None, threads: int = 1,
               bearer_token: str = "",
               study_fraction: float = 0.25,
               frontend_dir=None) -> FastAPI:
    engine = QueryEngine(shards, store=store, threads=threads)
    journal = RatingJournal(journal_path or "study_journal.ndjson")
    studies = StudyManager(engine, store, journal)
    labels_by_id = labels_by_id or {}
    app = FastAPI(title="slidesearch", docs_url=None, redoc_url=None)
    app.state.engine = engine
    app.state.studies = studies
    request_log = logging.getLogger("slidesearch.requests")

    @app.middleware("http")
    async def log_and_auth(request: Request, call_next):
        if bearer_token and request.url.path.startswith("/api/"):
            header = request.headers.get("authorization", "")
            if header != f"Bearer {bearer_token}":
                return JSONResponse({"detail": "unauthorized"},
                                    status_code=401)
        t0 = time.perf_counter()
        response = await call_next(request)
        request_log.info(json.dumps({
            "method": request.method,
            "path": request.url.path,
            "status": response.status_code,
            "ms": round((time.perf_counter() - t0) * 1000, 3),
        }, sort_keys=True))
        return response

    @app.exception_handler(ValidationError)
    async def _invalid(request, exc):
        return JSONResponse({"detail": str(exc)}, status_code=400)

    @app.exception_handler(DataError)
    async def _missing(request, exc):
        return JSONResponse({"detail": str(exc)}, status_code=404)

    @app.exception_handler(PermissionError)
    async def _forbidden(request, exc):
        return JSONResponse({"detail": str(exc)}, status_code=403)

    @app.get("/api/v1/health")
    def health():
        return {
            "status": "ok",
            "entries": len(shards),
            "patches": shards.n_patches,
            "embedder": shards.info.embedder_name,
            "dim": shards.dim,
        }

    @app.get("/api/v1/slides")
    def slides():
        return {
            "tile_size": store.tile_size,
            "slides": [
                {
                    "slide_id": s.slide_id,
                    "name": s.name,
                    "base_width_px": s.base_width_px,
                    "base_height_px": s.base_height_px,
                    "levels": [
                        {"magnification": m.name,
                         "downsample": m.downsample}
                        for m in s.levels
                    ],
                }
                for s in sorted(store.slides.values(),
                                key=lambda s: s.slide_id)
            ],
        }

    @app.get("/api/v1/tile/{slide_id}/{level}/{tx}/{ty}")
    def tile(slide_id: int, level: int, tx: int, ty: int):
        store.slide(slide_id)  # 404 on unknown slide
        path = store.tile_path(slide_id, level, tx, ty)
        if not path.is_file():
            raise DataError(f"no tile {level}/{ty}_{tx} on slide {slide_id}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/api/v1/patch/{patch_id}.png")
    def patch_png(patch_id: int):
        row = _patch_row_or_404(patch_id)
        t = shards.table
        pixels = store.read_region(
            int(t.slide_id[row]), MAG_FROM_CODE[int(t.mag[row])],
            int(t.x[row]), int(t.y[row]),
            int(t.side[row]), int(t.side[row]),
        )
        buf = io.BytesIO()
        Image.fromarray(pixels).save(buf, format="PNG", compress_level=1)
        return Response(content=buf.getvalue(), media_type="image/png")

    def _patch_row_or_404(patch_id: int) -> int:
        try:
            return shards.patch_row_by_id(patch_id)
        except ValidationError:
            raise DataError(f"unknown patch {patch_id}") from None

    @app.post("/api/v1/query")
    def query(body: dict):
        embedder_name = body.get("embedder")
        if embedder_name and embedder_name != shards.info.embedder_name:
            return JSONResponse(
                {"detail": f"database was built with "
                           f"{shards.info.embedder_name!r}, "
                           f"not {embedder_name!r}"},
                status_code=409,
            )
        try:
            mag = Magnification[body["mag"]]
        except KeyError:
            raise ValidationError(
                f"mag must be one of "
                f"{[m.name for m in Magnification]}"
            ) from None
        missing = [f for f in ("slide_id", "x", "y", "w", "h")
                   if f not in body]
        if missing:
            raise ValidationError(f"missing fields: {missing}")
        store.slide(int(body["slide_id"]))  # 404 before the size rule
        region = RegionSource(
            slide_id=int(body["slide_id"]),
            x=int(body["x"]), y=int(body["y"]),
            w=int(body["w"]), h=int(body["h"]),
            mag=mag,
        )
        spec = QuerySpec(
            region=region,
            k=int(body.get("k", 5)),
            oversample_factor=int(body.get("oversample_factor", 5)),
            min_separation_px=float(body.get("min_separation_px", 1000.0)),
            exclude_self=bool(body.get("exclude_self", True)),
            exclude_query_slide=bool(body.get("exclude_query_slide",
                                              False)),
        )
        outcome = engine.query(spec)
        return _outcome_json(outcome)

    def _outcome_json(outcome: QueryOutcome) -> dict:
        results = []
        for r in outcome.results:
            doc = r.to_json()
            doc["thumbnail_url"] = f"/api/v1/patch/{r.patch_id}.png"
            rec = labels_by_id.get(r.patch_id)
            doc["labels"] = rec.labels.to_json() if rec else None
            results.append(doc)
        return {"results": results, "exhausted": outcome.exhausted}

    @app.post("/api/v1/study/session")
    def study_session(body: dict):
        session = studies.create(
            rater_id=str(body.get("rater_id", "anonymous")),
            n_queries=int(body.get("n_queries", 20)),
            scoring=str(body.get("scoring", "feature")),
            seed=int(body.get("seed", 0)),
            random_fraction=float(body.get("random_fraction",
                                           study_fraction)),
            min_separation_px=float(body.get("min_separation_px", 1000.0)),
        )
        return {
            "session_id": session.session_id,
            "n_queries": len(session.queries),
            "scoring": session.scoring,
            "results_per_query": STUDY_RESULTS_PER_QUERY,
        }

    @app.get("/api/v1/study/next")
    def study_next(session_id: str):
        s = studies.get(session_id)
        if s.closed:
            raise PermissionError("session is closed")
        qi = s.next_unrated()
        if qi is None:
            return {"done": True, "session_id": session_id}
        q = s.queries[qi]
        # blinded: same fields for both arms, images only
        return {
            "done": False,
            "session_id": session_id,
            "query_index": qi,
            "total_queries": len(s.queries),
            "scoring": s.scoring,
            "scale": list(SCORING_SCALES[s.scoring]),
            "query_image_url": f"/api/v1/patch/{q.patch_id}.png",
            "results": [
                {"result_index": i, "image_url": f"/api/v1/patch/{pid}.png"}
                for i, pid in enumerate(q.result_patch_ids)
            ],
            "rated": sorted(q.ratings),
        }

    @app.post("/api/v1/study/rate")
    def study_rate(body: dict):
        studies.rate(
            session_id=str(body["session_id"]),
            query_index=int(body["query_index"]),
            result_index=int(body["result_index"]),
            score=body["score"],
        )
        return {"ok": True}

    @app.post("/api/v1/study/close")
    def study_close(body: dict):
        return studies.close(str(body["session_id"]))

    if frontend_dir and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True),
                  name="frontend")

    return app
