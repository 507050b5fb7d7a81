"""Retrieval quality metrics: top-k scores and variants, confusion
matrices, the multi-axis match-quality rubric, and two-proportion
chi-squared tests."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import LabelSet, PatchRecord
from .errors import DataError, ValidationError

AXES = ("feature", "organ", "gleason", "tumor")


def axis_labels(labels: LabelSet, axis: str) -> set:
    if axis == "feature":
        return set(labels.histologic_features)
    if axis == "organ":
        return {labels.organ} if labels.organ is not None else set()
    if axis == "gleason":
        return {labels.gleason.value} if labels.gleason is not None else set()
    if axis == "tumor":
        return ({labels.tumor_present}
                if labels.tumor_present is not None else set())
    raise ValidationError(f"unknown axis {axis!r}; expected one of {AXES}")


def primary_label(labels: LabelSet, axis: str):
    """Lexicographically first label on the axis, or None."""
    vals = sorted(axis_labels(labels, axis), key=str)
    return vals[0] if vals else None


def _matches(q: LabelSet, r: LabelSet, axis: str, mode: str) -> bool:
    if mode == "lenient":
        return bool(axis_labels(q, axis) & axis_labels(r, axis))
    if mode == "strict":
        pq = primary_label(q, axis)
        return pq is not None and pq == primary_label(r, axis)
    raise ValidationError(f"unknown match mode {mode!r}")


@dataclass
class QueryRecord:
    query: PatchRecord
    results: list[PatchRecord]
    provenance: str = "engine"


@dataclass
class RetrievalRun:
    queries: list[QueryRecord]
    config: dict = field(default_factory=dict)


def _eligible(run: RetrievalRun, axis: str) -> list[QueryRecord]:
    rows = [qr for qr in run.queries
            if axis_labels(qr.query.labels, axis)]
    if not rows:
        raise DataError(f"no query carries labels on axis {axis!r}")
    return rows


def top_k_score(run: RetrievalRun, k: int = 5, axis: str = "feature",
                mode: str = "lenient") -> float:
    """Fraction of queries with at least one matching result in the
    top k."""
    rows = _eligible(run, axis)
    hits = sum(
        any(_matches(qr.query.labels, r.labels, axis, mode)
            for r in qr.results[:k])
        for qr in rows
    )
    return hits / len(rows)


def metric_variants(run: RetrievalRun, k: int = 5, axis: str = "feature",
                    mode: str = "lenient", curve_max_k: int = 10) -> dict:
    """mean match fraction, linear rank-weighted match, and the top-k
    curve. Results missing past an exhausted cutoff count as misses."""
    rows = _eligible(run, axis)
    weights = np.arange(k, 0, -1, dtype=float)
    weights /= weights.sum()
    mean_total = 0.0
    weighted_total = 0.0
    for qr in rows:
        m = np.array([
            _matches(qr.query.labels, r.labels, axis, mode)
            for r in qr.results[:k]
        ], dtype=float)
        mean_total += m.sum() / k
        weighted_total += (m * weights[:len(m)]).sum()
    curve = {
        kk: top_k_score(run, k=kk, axis=axis, mode=mode)
        for kk in range(1, curve_max_k + 1)
    }
    return {
        "mean_match": mean_total / len(rows),
        "rank_weighted": weighted_total / len(rows),
        "top_k_curve": curve,
    }


def confusion_matrix(run: RetrievalRun, classes: list[str], k: int = 5,
                     axis: str = "feature") -> np.ndarray:
    """M[i][j]: fraction of class-i queries whose top k contain at least
    one class-j result. Rows need not sum to 1; the diagonal equals the
    per-class top-k score. Classes that only occur as results keep an
    all-zero row (there is nothing to average for them)."""
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros(len(classes), dtype=np.int64)
    m = np.zeros((len(classes), len(classes)))
    for qr in run.queries:
        qc = primary_label(qr.query.labels, axis)
        if qc is None:
            continue
        if qc not in index:
            raise DataError(f"query class {qc!r} not in {classes}")
        i = index[qc]
        counts[i] += 1
        seen = set()
        for r in qr.results[:k]:
            seen |= axis_labels(r.labels, axis)
        for c in seen:
            j = index.get(c)
            if j is not None:
                m[i, j] += 1
    if not counts.any():
        raise DataError(f"no queries carry any of {classes} on {axis!r}")
    return m / np.maximum(counts[:, None], 1)


def rubric_score(q: LabelSet, r: LabelSet) -> int:
    """Match quality on a 0..100 scale in steps of 25, combining tumor
    presence, grade, and histologic feature overlap. 'Looks visually
    different' is operationalized as disjoint feature sets."""
    if q.tumor_present is None or r.tumor_present is None:
        raise ValidationError("rubric_score needs tumor_present on both")
    overlap = bool(q.histologic_features & r.histologic_features)
    if q.tumor_present != r.tumor_present:
        return 25 if overlap else 0
    if q.tumor_present:  # both tumors: compare grades
        if q.gleason is None or r.gleason is None:
            raise ValidationError("tumor patches need a gleason grade")
        if q.gleason != r.gleason:
            return 50
    # grades match, or both patches are normal
    return 100 if overlap else 75


def rubric_mean(run: RetrievalRun, k: int = 5) -> float:
    scores = [
        rubric_score(qr.query.labels, r.labels)
        for qr in run.queries
        for r in qr.results[:k]
    ]
    if not scores:
        raise DataError("no query/result pairs to score")
    return float(np.mean(scores))


@dataclass(frozen=True)
class ChiSquaredResult:
    statistic: float
    df: int
    p_value: float
    table: tuple[tuple[int, int], tuple[int, int]]

    def to_json(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "table": [list(r) for r in self.table],
        }


def chi_squared_2x2(a_hits: int, a_total: int, b_hits: int,
                    b_total: int) -> ChiSquaredResult:
    """Two-tailed Pearson chi-squared test that two hit proportions are
    equal. The df=1 survival function reduces to erfc(sqrt(x/2))."""
    if a_total <= 0 or b_total <= 0:
        raise ValidationError("group totals must be positive")
    if not (0 <= a_hits <= a_total and 0 <= b_hits <= b_total):
        raise ValidationError("hits must lie within totals")
    obs = np.array([[a_hits, a_total - a_hits],
                    [b_hits, b_total - b_hits]], dtype=float)
    rows = obs.sum(axis=1, keepdims=True)
    cols = obs.sum(axis=0, keepdims=True)
    grand = obs.sum()
    expected = rows @ cols / grand
    if (expected <= 0).any():
        raise ValidationError(
            "chi-squared undefined: a cell has zero expected count"
        )
    stat = float(((obs - expected) ** 2 / expected).sum())
    p = float(math.erfc(math.sqrt(stat / 2.0)))
    return ChiSquaredResult(
        statistic=stat, df=1, p_value=p,
        table=((int(a_hits), int(a_total - a_hits)),
               (int(b_hits), int(b_total - b_hits))),
    )


def hit_counts(run: RetrievalRun, k: int = 5, axis: str = "feature",
               mode: str = "lenient") -> tuple[int, int]:
    """(queries with a top-k match, eligible queries) — chi-squared
    inputs."""
    rows = _eligible(run, axis)
    hits = sum(
        any(_matches(qr.query.labels, r.labels, axis, mode)
            for r in qr.results[:k])
        for qr in rows
    )
    return hits, len(rows)


@dataclass
class EvalReport:
    top_k_scores: dict[int, float]
    mean_match: float
    rank_weighted: float
    confusion: list[list[float]] | None = None
    classes: list[str] | None = None
    organ_match: float | None = None
    gleason_match: float | None = None
    combined_match: float | None = None
    rubric_mean: float | None = None
    tests: list[ChiSquaredResult] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "top_k_scores": {str(k): v
                             for k, v in sorted(self.top_k_scores.items())},
            "mean_match": self.mean_match,
            "rank_weighted": self.rank_weighted,
            "confusion": self.confusion,
            "classes": self.classes,
            "organ_match": self.organ_match,
            "gleason_match": self.gleason_match,
            "combined_match": self.combined_match,
            "rubric_mean": self.rubric_mean,
            "tests": [t.to_json() for t in self.tests],
            "config": self.config,
        }

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")

    def confusion_csv(self) -> str:
        if self.confusion is None:
            raise DataError("report holds no confusion matrix")
        lines = ["," + ",".join(self.classes)]
        for cls, row in zip(self.classes, self.confusion):
            lines.append(cls + "," + ",".join(f"{v:.6f}" for v in row))
        return "\n".join(lines) + "\n"

    def curve_tsv(self) -> str:
        lines = ["k\ttop_k_score"]
        for k, v in sorted(self.top_k_scores.items()):
            lines.append(f"{k}\t{v:.6f}")
        return "\n".join(lines) + "\n"


def _combined_match(run: RetrievalRun, k: int, mode: str,
                    second_axis: str) -> float:
    rows = _eligible(run, "feature")
    rows = [qr for qr in rows if axis_labels(qr.query.labels, second_axis)]
    if not rows:
        raise DataError(f"no query carries both feature and {second_axis}")
    hits = sum(
        any(_matches(qr.query.labels, r.labels, "feature", mode)
            and _matches(qr.query.labels, r.labels, second_axis, mode)
            for r in qr.results[:k])
        for qr in rows
    )
    return hits / len(rows)


def evaluate_run(run: RetrievalRun, k: int = 5, axis: str = "feature",
                 mode: str = "lenient", classes: list[str] | None = None,
                 curve_max_k: int = 10) -> EvalReport:
    """Compute every metric the run's labels support."""
    variants = metric_variants(run, k=k, axis=axis, mode=mode,
                               curve_max_k=curve_max_k)
    report = EvalReport(
        top_k_scores=variants["top_k_curve"],
        mean_match=variants["mean_match"],
        rank_weighted=variants["rank_weighted"],
        config=dict(run.config, k=k, axis=axis, mode=mode),
    )
    if classes:
        cm = confusion_matrix(run, classes, k=k, axis=axis)
        report.confusion = cm.tolist()
        report.classes = list(classes)

    def have(ax):
        return any(axis_labels(qr.query.labels, ax) for qr in run.queries)

    if have("organ"):
        report.organ_match = top_k_score(run, k=k, axis="organ", mode=mode)
    if have("gleason"):
        report.gleason_match = top_k_score(run, k=k, axis="gleason",
                                           mode=mode)
    if have("feature"):
        # feature + organ when organs are labeled, else feature + grade
        if have("organ"):
            report.combined_match = _combined_match(run, k, mode, "organ")
        elif have("gleason"):
            report.combined_match = _combined_match(run, k, mode, "gleason")
    try:
        report.rubric_mean = rubric_mean(run, k=k)
    except (ValidationError, DataError):
        report.rubric_mean = None  # labels don't support the rubric
    return report


@dataclass(frozen=True)
class SweepPoint:
    magnification: str | None = None
    db_size: int | None = None
    k: int = 5

    def to_json(self) -> dict:
        return {"magnification": self.magnification,
                "db_size": self.db_size, "k": self.k}


def sweep(points: list[SweepPoint], run_builder, **eval_kwargs
          ) -> list[tuple[SweepPoint, EvalReport]]:
    """One evaluation per grid point; ``run_builder(point)`` supplies the
    RetrievalRun (rebuilding or subsampling the database as needed)."""
    out = []
    for point in points:
        run = run_builder(point)
        report = evaluate_run(run, k=point.k, **eval_kwargs)
        report.config["sweep_point"] = point.to_json()
        out.append((point, report))
    return out
