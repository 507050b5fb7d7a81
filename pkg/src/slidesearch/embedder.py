"""Embedding providers and query preprocessing.

Every image that gets embedded — database patch or query crop — is first
resized to 224x224 with corner-aligned bilinear interpolation, so a patch
and an exact crop of it embed bit-identically. Orientation expansion
reorients the pixels *before* the resize.

The reference embedder is a deterministic hand-rolled descriptor
(color histogram + oriented gradient energy + coarse luminance layout).
It stands in for a learned model: real embeddings can be brought in via
``import_embeddings`` instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Orientation, apply_orientation
from .dbformat import read_db
from .errors import DimMismatchError, ValidationError

DIM = 128
_OUT = 224
_CELLS = 4
_CELL_PX = _OUT // _CELLS  # 56


@dataclass(frozen=True)
class EmbedderDescriptor:
    name: str
    dim: int
    version: str
    deterministic: bool


@dataclass
class OrientedEmbeddingSet:
    """All 8 orientation embeddings of one patch."""

    patch_id: int
    embeddings: dict[Orientation, np.ndarray]

    def __post_init__(self):
        if set(self.embeddings) != set(Orientation):
            missing = sorted(
                o.name for o in set(Orientation) - set(self.embeddings)
            )
            raise ValidationError(
                f"patch {self.patch_id}: missing orientations {missing}"
            )
        dims = {v.shape[0] for v in self.embeddings.values()}
        if len(dims) != 1:
            raise ValidationError(
                f"patch {self.patch_id}: inconsistent embedding dims {dims}"
            )

    @property
    def dim(self) -> int:
        return next(iter(self.embeddings.values())).shape[0]


_resize_cache: dict[tuple[int, int], tuple] = {}


_DEN = _OUT - 1  # 223; weight denominator of corner-aligned sampling
_HALF = (_DEN * _DEN - 1) // 2


def _resize_plan(h: int, w: int):
    """Index/weight arrays for corner-aligned sampling of an h x w image.

    Sample position i*(n-1)/223 is kept as an exact fraction: integer part
    plus a numerator out of 223, so interpolation can run in exact int32
    fixed point.
    """
    key = (h, w)
    plan = _resize_cache.get(key)
    if plan is None:
        def axis_plan(n):
            num = np.arange(_OUT, dtype=np.int64) * (n - 1)
            lo = num // _DEN
            frac = (num - lo * _DEN).astype(np.int32)
            hi = np.minimum(lo + 1, n - 1)
            return lo.astype(np.intp), hi.astype(np.intp), frac

        y0, y1, fy = axis_plan(h)
        x0, x1, fx = axis_plan(w)
        plan = (y0, y1, fy[:, None, None], x0, x1, fx[None, :, None])
        _resize_cache[key] = plan
    return plan


def resize_to_224(img: np.ndarray) -> np.ndarray:
    """Corner-aligned bilinear resize to 224x224 uint8.

    Output pixel (i, j) samples the input at (i*(H-1)/223, j*(W-1)/223),
    so corners map to corners exactly and a 224x224 input is returned
    unchanged. The interpolation runs in exact int32 fixed point (the
    bilinear weights all have denominator 223^2), so the result is the
    exactly rounded bilinear value and reorienting a square input commutes
    with resizing, bit for bit.
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"expected (H, W, 3) pixels, got {img.shape}")
    h, w = img.shape[:2]
    if h == _OUT and w == _OUT and img.dtype == np.uint8:
        return np.ascontiguousarray(img)
    y0, y1, fy, x0, x1, fx = _resize_plan(h, w)
    left = img.take(x0, axis=1).astype(np.int32)
    right = img.take(x1, axis=1).astype(np.int32)
    np.subtract(right, left, out=right)
    np.multiply(right, fx, out=right)
    np.multiply(left, _DEN, out=left)
    np.add(left, right, out=left)  # horizontal numerator, <= 255 * 223
    top = left.take(y0, axis=0)
    bot = left.take(y1, axis=0)
    np.subtract(bot, top, out=bot)
    np.multiply(bot, fy, out=bot)
    np.multiply(top, _DEN, out=top)
    np.add(top, bot, out=top)  # full numerator, <= 255 * 223^2
    np.add(top, _HALF, out=top)
    np.floor_divide(top, _DEN * _DEN, out=top)
    return top.astype(np.uint8)


def preprocess_query(img: np.ndarray) -> np.ndarray:
    """Resize a user-selected query crop, enforcing the allowed size range
    (200 to 400 pixels on each side)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"expected (H, W, 3) pixels, got {img.shape}")
    h, w = img.shape[:2]
    if not (200 <= w <= 400 and 200 <= h <= 400):
        raise ValidationError(
            f"query must be between 200 and 400 pixels in height and width, "
            f"got {w}x{h}"
        )
    return resize_to_224(img)


_CHAN_OFFSET = np.array([0, 16, 32], dtype=np.int32)
_CELL_GROUP4 = (
    ((np.arange(1, _OUT - 1) // _CELL_PX)[:, None] * _CELLS
     + (np.arange(1, _OUT - 1) // _CELL_PX)[None, :]) * 4
).astype(np.int32)


def _luminance_milli(img224: np.ndarray) -> np.ndarray:
    """Integer luminance * 1000 (299R + 587G + 114B); exact, so spatial
    reductions are order-independent."""
    p = img224.astype(np.int32)
    return 299 * p[:, :, 0] + 587 * p[:, :, 1] + 114 * p[:, :, 2]


def _color_histogram(img224: np.ndarray) -> np.ndarray:
    """16 bins per channel, as pixel fractions (each channel sums to 1)."""
    bins = (img224 >> 4).astype(np.int32) + _CHAN_OFFSET
    n = img224.shape[0] * img224.shape[1]
    return np.bincount(bins.ravel(), minlength=48) / n


def _gradient_histogram(lumi: np.ndarray) -> np.ndarray:
    """4x4 spatial cells x 4 direction quadrants of central-difference
    gradients, weighted by gradient magnitude and normalized to total
    mass 1 (all zeros for a flat image).

    Direction bins are decided by sign tests, not angles, so a 90-degree
    image rotation cycles the bins exactly.
    """
    gx = lumi[1:-1, 2:] - lumi[1:-1, :-2]
    gy = lumi[2:, 1:-1] - lumi[:-2, 1:-1]
    gx64 = gx.astype(np.float64)
    gy64 = gy.astype(np.float64)
    mag = np.sqrt(gx64 * gx64 + gy64 * gy64)

    dbin = np.zeros(gx.shape, dtype=np.int32)
    dbin[(gx <= 0) & (gy > 0)] = 1
    dbin[(gx < 0) & (gy <= 0)] = 2
    dbin[(gx >= 0) & (gy < 0)] = 3

    hist = np.bincount((_CELL_GROUP4 + dbin).ravel(), weights=mag.ravel(),
                       minlength=_CELLS * _CELLS * 4)
    total = hist.sum()
    return hist / total if total > 0 else hist


def _luminance_cells(lumi: np.ndarray) -> np.ndarray:
    """Mean luminance of each 4x4 cell, scaled to [0, 1]."""
    sums = lumi.reshape(_CELLS, _CELL_PX, _CELLS, _CELL_PX).sum(axis=(1, 3))
    return sums / (_CELL_PX * _CELL_PX * 255_000)


def reference_embed(img224: np.ndarray) -> np.ndarray:
    """Deterministic 128-d embedding of a preprocessed 224x224x3 image:
    48 color bins | 64 gradient bins | 16 luminance cells, L2-normalized.
    """
    img224 = np.asarray(img224)
    if img224.shape != (_OUT, _OUT, 3) or img224.dtype != np.uint8:
        raise ValidationError(
            f"expected uint8 ({_OUT}, {_OUT}, 3), got "
            f"{img224.dtype} {img224.shape}"
        )
    lumi = _luminance_milli(img224)
    v = np.concatenate([
        _color_histogram(img224),
        _gradient_histogram(lumi),
        _luminance_cells(lumi).ravel(),
    ])
    return _finalize(v)


def _finalize(v: np.ndarray) -> np.ndarray:
    norm = np.sqrt((v * v).sum())
    if norm == 0.0:
        # nothing measurable in the patch: fall back to a fixed basis vector
        v = np.zeros(v.shape[0])
        v[0] = 1.0
    else:
        v = v / norm
    return v.astype(np.float32)


class ReferenceEmbedder:
    descriptor = EmbedderDescriptor(
        name="reference-v1", dim=DIM, version="1", deterministic=True
    )

    def embed_preprocessed(self, img224: np.ndarray) -> np.ndarray:
        return reference_embed(img224)

    def embed_image(self, img: np.ndarray) -> np.ndarray:
        return self.embed_preprocessed(resize_to_224(img))


class ColorOnlyEmbedder:
    """Degraded baseline: color histogram only, same vector layout.
    Useful as the weak comparator in retrieval experiments."""

    descriptor = EmbedderDescriptor(
        name="color-only-v1", dim=DIM, version="1", deterministic=True
    )

    def embed_preprocessed(self, img224: np.ndarray) -> np.ndarray:
        img224 = np.asarray(img224)
        if img224.shape != (_OUT, _OUT, 3) or img224.dtype != np.uint8:
            raise ValidationError(
                f"expected uint8 ({_OUT}, {_OUT}, 3), got "
                f"{img224.dtype} {img224.shape}"
            )
        v = np.zeros(DIM)
        v[:48] = _color_histogram(img224)
        return _finalize(v)

    def embed_image(self, img: np.ndarray) -> np.ndarray:
        return self.embed_preprocessed(resize_to_224(img))


_REGISTRY = {
    ReferenceEmbedder.descriptor.name: ReferenceEmbedder,
    ColorOnlyEmbedder.descriptor.name: ColorOnlyEmbedder,
}


def get_embedder(name: str):
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValidationError(
            f"unknown embedder {name!r}; available: {sorted(_REGISTRY)}"
        ) from None


def embed_all_orientations(img: np.ndarray, embedder,
                           patch_id: int = -1) -> OrientedEmbeddingSet:
    """Embed all 8 reorientations of a square patch. The o-entry is
    bit-identical to embedding ``apply_orientation(img, o)`` directly,
    which is what makes a reoriented query hit its source at distance 0.
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != img.shape[1]:
        raise ValidationError("orientation expansion needs a square patch")
    return OrientedEmbeddingSet(
        patch_id=patch_id,
        embeddings={
            o: embedder.embed_image(apply_orientation(img, o))
            for o in Orientation
        },
    )


def import_embeddings(path, expected_dim: int | None = None
                      ) -> list[OrientedEmbeddingSet]:
    """Load externally computed embeddings from an embedding-database file.

    Validates that every patch carries all 8 orientations exactly once and
    that dimensions are uniform (and equal to ``expected_dim`` if given).
    """
    header, table = read_db(path)
    if expected_dim is not None and header.dim != expected_dim:
        raise DimMismatchError(
            f"{path}: dim {header.dim} != expected {expected_dim}"
        )
    table.check_unique()
    sets: list[OrientedEmbeddingSet] = []
    order = np.lexsort((table.orientation, table.patch_id))
    i = 0
    ids = table.patch_id
    while i < len(order):
        j = i
        pid = ids[order[i]]
        embs: dict[Orientation, np.ndarray] = {}
        while j < len(order) and ids[order[j]] == pid:
            r = order[j]
            embs[Orientation(int(table.orientation[r]))] = table.vecs[r]
            j += 1
        sets.append(OrientedEmbeddingSet(patch_id=int(pid), embeddings=embs))
        i = j
    return sets


def storage_arithmetic(side_px: int = 300, dim: int = DIM) -> dict:
    """How much smaller the stored representation is than raw pixels,
    by scalar count and by payload bytes per patch."""
    raw_scalars = side_px * side_px * 3
    emb_scalars = 8 * dim
    return {
        "raw_scalars_per_patch": raw_scalars,
        "embedding_scalars_per_patch": emb_scalars,
        "scalar_reduction": raw_scalars / emb_scalars,
        "embedding_payload_bytes_per_patch": emb_scalars * 4,
        "raw_bytes_per_patch": raw_scalars,
        "byte_reduction": raw_scalars / (emb_scalars * 4),
    }
