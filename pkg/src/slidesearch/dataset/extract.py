"""Patch extraction from annotated slides, plus balanced subsampling.

A grid-aligned patch receives a label when at least ``coverage_threshold``
of its area lies inside the union of that label's polygons. Coverage is
measured by even-odd scanline rasterization at level resolution (pixel
centers), which is exact for the axis-aligned synthetic regions and easy
to cross-check against a per-pixel point-in-polygon oracle.
"""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..core import Gleason, LabelSet, Magnification, PatchRecord
from ..errors import ClassUnderflowError, DataError, ValidationError
from .annotations import AnnotationRegion
from .store import SlideStore


def rasterize_polygons(polygons, x0: int, y0: int, w: int, h: int,
                       downsample: int) -> np.ndarray:
    """Even-odd fill of base-px polygons onto a level-px grid.

    A pixel (r, c) of the output counts as inside when its center
    (x0+c+0.5, y0+r+0.5) in level coordinates is inside an odd number of
    crossings. Edges are treated half-open in y, so vertices on a scanline
    are not double-counted.
    """
    mask = np.zeros((h, w), dtype=bool)
    for poly in polygons:
        pts = [(px / downsample, py / downsample) for px, py in poly]
        n = len(pts)
        edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
        for r in range(h):
            cy = y0 + r + 0.5
            xs = []
            for (ax, ay), (bx, by) in edges:
                if (ay <= cy) != (by <= cy):
                    xs.append(ax + (cy - ay) * (bx - ax) / (by - ay))
            if not xs:
                continue
            xs.sort()
            for i in range(0, len(xs) - 1, 2):
                # centers strictly inside [xs[i], xs[i+1])
                lo = int(np.ceil(xs[i] - x0 - 0.5))
                hi = int(np.ceil(xs[i + 1] - x0 - 0.5))
                lo, hi = max(lo, 0), min(hi, w)
                if lo < hi:
                    mask[r, lo:hi] ^= True
    return mask


def _grid_coverage(mask: np.ndarray, origins_x: np.ndarray,
                   origins_y: np.ndarray, side: int) -> np.ndarray:
    """Inside-pixel count for each (y, x) patch cell via an integral image."""
    ii = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask, axis=0), axis=1, out=ii[1:, 1:])
    oy = origins_y[:, None]
    ox = origins_x[None, :]
    return (ii[oy + side, ox + side] - ii[oy, ox + side]
            - ii[oy + side, ox] + ii[oy, ox])


def extract_patches(store: SlideStore, annotations: list[AnnotationRegion],
                    mag: Magnification, side_px: int = 300,
                    coverage_threshold: float = 0.75,
                    stride: int | None = None,
                    keep_unlabeled: bool = False) -> list[PatchRecord]:
    """Extract grid-aligned patches at one magnification.

    Patches are non-overlapping by default (stride = side_px); pass a
    smaller stride for overlapping serving databases. Unlabeled patches
    are dropped unless ``keep_unlabeled`` (serving databases keep them).
    Patch ids are dense, 0-based, in (slide_id, y, x) scan order.
    """
    if stride is None:
        stride = side_px
    if stride <= 0 or side_px <= 0:
        raise ValidationError("side_px and stride must be positive")
    by_slide: dict[int, list[AnnotationRegion]] = defaultdict(list)
    for ann in annotations:
        slide = store.slide(ann.slide_id)  # raises on unknown slide
        ann.validate_within(slide)
        by_slide[ann.slide_id].append(ann)

    ds = mag.downsample
    patches: list[PatchRecord] = []
    for slide_id in sorted(by_slide):
        slide = store.slide(slide_id)
        if mag not in slide.levels:
            raise DataError(f"slide {slide_id} has no {mag.name} level")
        lw, lh = slide.level_size(mag)
        ox = np.arange(0, lw - side_px + 1, stride)
        oy = np.arange(0, lh - side_px + 1, stride)
        if len(ox) == 0 or len(oy) == 0:
            continue

        groups: dict[tuple[str, str], list] = defaultdict(list)
        for ann in by_slide[slide_id]:
            groups[(ann.label_kind, ann.label)].append(ann.polygon)
        area = side_px * side_px
        needed = coverage_threshold * area
        coverage: dict[tuple[str, str], np.ndarray] = {}
        for key, polys in groups.items():
            mask = rasterize_polygons(polys, 0, 0, lw, lh, ds)
            coverage[key] = _grid_coverage(mask, ox, oy, side_px)

        for iy, gy in enumerate(oy):
            for ix, gx in enumerate(ox):
                feats = set()
                organ_cov: list[tuple[int, str]] = []
                gleason_cov: list[tuple[int, str]] = []
                for (kind, label), cov in coverage.items():
                    c = int(cov[iy, ix])
                    if c < needed or c == 0:
                        continue
                    if kind == "histologic_feature":
                        feats.add(label)
                    elif kind == "organ":
                        organ_cov.append((c, label))
                    else:
                        gleason_cov.append((c, label))
                organ = _pick_dominant(organ_cov)
                gleason = _pick_dominant(gleason_cov)
                labels = LabelSet(
                    histologic_features=frozenset(feats),
                    organ=organ,
                    gleason=Gleason(gleason) if gleason else None,
                )
                if labels.empty and not keep_unlabeled:
                    continue
                patches.append(PatchRecord.create(
                    slide,
                    patch_id=-1,
                    magnification=mag,
                    x=int(gx) * ds,
                    y=int(gy) * ds,
                    side_px=side_px,
                    labels=labels,
                ))
    return renumber_patches(patches)


def _pick_dominant(cov_labels: list[tuple[int, str]]) -> str | None:
    """Highest coverage wins; ties break to the lexicographically first."""
    if not cov_labels:
        return None
    return min(cov_labels, key=lambda cl: (-cl[0], cl[1]))[1]


def renumber_patches(patches: list[PatchRecord]) -> list[PatchRecord]:
    """Assign dense 0-based ids in (slide_id, magnification, y, x) order."""
    ordered = sorted(
        patches,
        key=lambda p: (p.slide_id, p.magnification.downsample, p.y, p.x),
    )
    return [
        PatchRecord(
            patch_id=i, slide_id=p.slide_id, magnification=p.magnification,
            x=p.x, y=p.y, side_px=p.side_px, labels=p.labels,
        )
        for i, p in enumerate(ordered)
    ]


def balancing_class(p: PatchRecord, class_axis: str):
    """Class key a patch counts toward when balancing; None = not eligible.
    Multi-label patches count toward their lexicographically first label."""
    if class_axis == "feature":
        feats = sorted(p.labels.histologic_features)
        return feats[0] if feats else None
    if class_axis == "gleason":
        return p.labels.gleason.value if p.labels.gleason else None
    if class_axis == "feature_x_organ":
        feats = sorted(p.labels.histologic_features)
        if not feats or p.labels.organ is None:
            return None
        return (feats[0], p.labels.organ)
    raise ValidationError(f"unknown class_axis {class_axis!r}")


def sample_balanced(patches: list[PatchRecord], n_per_class: int,
                    class_axis: str, seed: int) -> list[PatchRecord]:
    """Exactly n_per_class patches per class, drawn without replacement,
    deterministic for a fixed seed. Raises with per-class counts when any
    class is short."""
    if n_per_class <= 0:
        raise ValidationError("n_per_class must be positive")
    groups: dict = defaultdict(list)
    for p in patches:
        key = balancing_class(p, class_axis)
        if key is not None:
            groups[key].append(p)
    if not groups:
        raise DataError(f"no patches carry the {class_axis!r} axis")
    counts = {k: len(v) for k, v in groups.items()}
    if any(c < n_per_class for c in counts.values()):
        raise ClassUnderflowError(n_per_class, counts)
    rng = np.random.default_rng(seed)
    chosen: list[PatchRecord] = []
    for key in sorted(groups):
        group = groups[key]
        idx = rng.choice(len(group), size=n_per_class, replace=False)
        chosen.extend(group[i] for i in idx)
    return sorted(chosen, key=lambda p: p.patch_id)


def save_patch_table(path, patches: list[PatchRecord]) -> None:
    with open(path, "w") as f:
        for p in patches:
            f.write(json.dumps(p.to_json(), sort_keys=True) + "\n")


def load_patch_table(path) -> list[PatchRecord]:
    out = []
    with open(Path(path)) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(PatchRecord.from_json(json.loads(line)))
    return out
