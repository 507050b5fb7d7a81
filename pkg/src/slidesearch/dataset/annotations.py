"""Free-hand region annotations: polygons in base pixels with one label."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..core import Gleason, SlideRef
from ..errors import ValidationError

LABEL_KINDS = ("histologic_feature", "organ", "gleason")


def _orient(ax, ay, bx, by, cx, cy) -> int:
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    return (v > 0) - (v < 0)


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """True if segment p1p2 touches p3p4 anywhere (endpoints included)."""
    d1 = _orient(*p3, *p4, *p1)
    d2 = _orient(*p3, *p4, *p2)
    d3 = _orient(*p1, *p2, *p3)
    d4 = _orient(*p1, *p2, *p4)
    if d1 != d2 and d3 != d4:
        return True

    def on_segment(px, py, qx, qy, rx, ry):
        return (min(px, qx) <= rx <= max(px, qx)
                and min(py, qy) <= ry <= max(py, qy))

    if d1 == 0 and on_segment(*p3, *p4, *p1):
        return True
    if d2 == 0 and on_segment(*p3, *p4, *p2):
        return True
    if d3 == 0 and on_segment(*p1, *p2, *p3):
        return True
    if d4 == 0 and on_segment(*p1, *p2, *p4):
        return True
    return False


@dataclass(frozen=True)
class AnnotationRegion:
    slide_id: int
    label: str
    label_kind: str
    polygon: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if self.label_kind not in LABEL_KINDS:
            raise ValidationError(
                f"label_kind {self.label_kind!r} not one of {LABEL_KINDS}"
            )
        if self.label_kind == "gleason":
            try:
                Gleason(self.label)
            except ValueError:
                raise ValidationError(
                    f"gleason label must be one of "
                    f"{[g.value for g in Gleason]}, got {self.label!r}"
                ) from None
        poly = tuple((float(x), float(y)) for x, y in self.polygon)
        object.__setattr__(self, "polygon", poly)
        if len(poly) < 3:
            raise ValidationError("polygon needs at least 3 vertices")
        n = len(poly)
        for i in range(n):
            if poly[i] == poly[(i + 1) % n]:
                raise ValidationError("polygon has a zero-length edge")
        # simple-polygon check: non-adjacent edges must not touch
        for i in range(n):
            a1, a2 = poly[i], poly[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue
                b1, b2 = poly[j], poly[(j + 1) % n]
                if _segments_intersect(a1, a2, b1, b2):
                    raise ValidationError(
                        f"polygon self-intersects between edges {i} and {j}"
                    )

    def validate_within(self, slide: SlideRef) -> None:
        for (x, y) in self.polygon:
            if not (0 <= x <= slide.base_width_px
                    and 0 <= y <= slide.base_height_px):
                raise ValidationError(
                    f"vertex ({x}, {y}) outside slide {slide.slide_id} "
                    f"bounds {slide.base_width_px}x{slide.base_height_px}"
                )

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.polygon]
        ys = [p[1] for p in self.polygon]
        return min(xs), min(ys), max(xs), max(ys)


def save_annotations(path, regions: list[AnnotationRegion]) -> None:
    doc = [
        {
            "slide_id": r.slide_id,
            "label": r.label,
            "label_kind": r.label_kind,
            "points": [[x, y] for x, y in r.polygon],
        }
        for r in regions
    ]
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_annotations(path) -> list[AnnotationRegion]:
    doc = json.loads(Path(path).read_text())
    return [
        AnnotationRegion(
            slide_id=int(d["slide_id"]),
            label=d["label"],
            label_kind=d["label_kind"],
            polygon=tuple((p[0], p[1]) for p in d["points"]),
        )
        for d in doc
    ]
