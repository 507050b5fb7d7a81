"""Shared domain types: slides, magnifications, patches, labels, and the
8-element orientation group used to expand patches.

Coordinate convention: every stored x/y is in base-level pixels (the highest
magnification). Level pixels are derived by dividing by the level's
downsample factor. Patch ``side_px`` is a level-pixel length, so a patch's
base footprint is ``side_px * downsample`` on each side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np

from .errors import ValidationError


class Magnification(Enum):
    """Pyramid level. The downsample factor is fixed per magnification."""

    M40X = 1
    M20X = 2
    M10X = 4
    M5X = 8

    @property
    def downsample(self) -> int:
        return self.value

    def __lt__(self, other: "Magnification") -> bool:
        return self.value < other.value


#: Stable wire encoding of magnifications (u8 in the database format).
MAG_CODES = {Magnification.M40X: 0, Magnification.M20X: 1,
             Magnification.M10X: 2, Magnification.M5X: 3}
MAG_FROM_CODE = {v: k for k, v in MAG_CODES.items()}


class Orientation(IntEnum):
    """The 8 square symmetries: optional horizontal mirror (M), applied
    first, followed by ``code % 4`` counter-clockwise quarter turns."""

    R0 = 0
    R90 = 1
    R180 = 2
    R270 = 3
    MR0 = 4
    MR90 = 5
    MR180 = 6
    MR270 = 7

    @property
    def mirrored(self) -> bool:
        return self.value >= 4

    @property
    def quarter_turns(self) -> int:
        return self.value % 4


def compose_orientations(a: Orientation, b: Orientation) -> Orientation:
    """Orientation equivalent to applying ``a`` first, then ``b``.

    With mirror-then-rotate elements, rotations add when ``b`` carries no
    mirror and subtract when it does (the mirror conjugates rotations).
    """
    ka, kb = a.quarter_turns, b.quarter_turns
    k = (ka + kb) % 4 if not b.mirrored else (kb - ka) % 4
    m = a.mirrored ^ b.mirrored
    return Orientation(k + (4 if m else 0))


def apply_orientation(img: np.ndarray, o: Orientation) -> np.ndarray:
    """Reorient an (H, W, ...) pixel array. Pure pixel permutation.

    Quarter turns are counter-clockwise; the mirror is a horizontal flip
    applied before any rotation. 90/270-degree turns require H == W.
    """
    if img.ndim < 2:
        raise ValidationError("expected an (H, W, ...) pixel array")
    h, w = img.shape[:2]
    if o.quarter_turns % 2 == 1 and h != w:
        raise ValidationError(
            f"cannot rotate a {w}x{h} image by 90/270 degrees: not square"
        )
    out = img[:, ::-1] if o.mirrored else img
    if o.quarter_turns:
        out = np.rot90(out, k=o.quarter_turns)
    return np.ascontiguousarray(out)


@dataclass(frozen=True)
class SlideRef:
    """One slide in a store: identity, base dimensions, tile geometry and
    the pyramid levels that exist for it."""

    slide_id: int
    name: str
    base_width_px: int
    base_height_px: int
    tile_size_px: int
    levels: tuple[Magnification, ...]

    def __post_init__(self):
        if self.slide_id < 0:
            raise ValidationError("slide_id must be >= 0")
        if self.base_width_px <= 0 or self.base_height_px <= 0:
            raise ValidationError("slide base dimensions must be positive")
        if self.tile_size_px <= 0:
            raise ValidationError("tile_size_px must be positive")
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ValidationError("a slide needs at least one level")
        downs = [m.downsample for m in levels]
        if downs[0] != 1:
            raise ValidationError("levels must start at downsample 1")
        if any(b <= a for a, b in zip(downs, downs[1:])):
            raise ValidationError("level downsamples must strictly increase")

    def level_size(self, mag: Magnification) -> tuple[int, int]:
        """(width, height) in level pixels at ``mag``."""
        ds = mag.downsample
        return (-(-self.base_width_px // ds), -(-self.base_height_px // ds))


class Gleason(Enum):
    NT = "NT"
    GP3 = "GP3"
    GP4 = "GP4"
    GP5 = "GP5"


@dataclass(frozen=True)
class LabelSet:
    """Labels attached to a patch. ``tumor_present`` is derived from the
    gleason value when not given explicitly."""

    histologic_features: frozenset[str] = field(default_factory=frozenset)
    organ: str | None = None
    gleason: Gleason | None = None
    tumor_present: bool | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "histologic_features", frozenset(self.histologic_features)
        )
        if self.gleason is not None:
            implied = self.gleason is not Gleason.NT
            if self.tumor_present is None:
                object.__setattr__(self, "tumor_present", implied)
            elif self.tumor_present != implied:
                raise ValidationError(
                    f"gleason {self.gleason.value} contradicts "
                    f"tumor_present={self.tumor_present}"
                )

    @property
    def empty(self) -> bool:
        return (not self.histologic_features and self.organ is None
                and self.gleason is None and self.tumor_present is None)

    def to_json(self) -> dict:
        return {
            "histologic_features": sorted(self.histologic_features),
            "organ": self.organ,
            "gleason": self.gleason.value if self.gleason else None,
            "tumor_present": self.tumor_present,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LabelSet":
        return cls(
            histologic_features=frozenset(d.get("histologic_features") or ()),
            organ=d.get("organ"),
            gleason=Gleason(d["gleason"]) if d.get("gleason") else None,
            tumor_present=d.get("tumor_present"),
        )


@dataclass(frozen=True)
class PatchRecord:
    """One extracted patch. ``x``/``y`` are the top-left corner in base
    pixels and must be multiples of the level's downsample; ``side_px`` is
    the side length in level pixels."""

    patch_id: int
    slide_id: int
    magnification: Magnification
    x: int
    y: int
    side_px: int = 300
    labels: LabelSet = field(default_factory=LabelSet)

    def __post_init__(self):
        ds = self.magnification.downsample
        if self.side_px <= 0:
            raise ValidationError("side_px must be positive")
        if self.x < 0 or self.y < 0:
            raise ValidationError("patch origin must be non-negative")
        if self.x % ds or self.y % ds:
            raise ValidationError(
                f"patch origin ({self.x}, {self.y}) not aligned to "
                f"downsample {ds}"
            )

    @classmethod
    def create(cls, slide: SlideRef, **kwargs) -> "PatchRecord":
        """Construct a patch validated against the slide's bounds."""
        p = cls(slide_id=slide.slide_id, **kwargs)
        ds = p.magnification.downsample
        if p.magnification not in slide.levels:
            raise ValidationError(
                f"slide {slide.slide_id} has no {p.magnification.name} level"
            )
        if (p.x + p.side_px * ds > slide.base_width_px
                or p.y + p.side_px * ds > slide.base_height_px):
            raise ValidationError(
                f"patch at ({p.x}, {p.y}) side {p.side_px}@{ds}x exceeds "
                f"slide bounds {slide.base_width_px}x{slide.base_height_px}"
            )
        return p

    @property
    def base_side(self) -> int:
        return self.side_px * self.magnification.downsample

    def to_json(self) -> dict:
        return {
            "patch_id": self.patch_id,
            "slide_id": self.slide_id,
            "magnification": self.magnification.name,
            "x": self.x,
            "y": self.y,
            "side_px": self.side_px,
            "labels": self.labels.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PatchRecord":
        return cls(
            patch_id=d["patch_id"],
            slide_id=d["slide_id"],
            magnification=Magnification[d["magnification"]],
            x=d["x"],
            y=d["y"],
            side_px=d["side_px"],
            labels=LabelSet.from_json(d.get("labels") or {}),
        )


def base_center(p: PatchRecord) -> tuple[float, float]:
    """Patch center in base pixels; the separation rule is measured here so
    it is magnification-independent."""
    half = p.side_px * p.magnification.downsample / 2
    return (p.x + half, p.y + half)


def as_embedding(vec, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite float32 1-D embedding, checking ``dim`` if given."""
    v = np.asarray(vec, dtype=np.float32)
    if v.ndim != 1:
        raise ValidationError(f"embedding must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValidationError(f"embedding dim {v.shape[0]} != expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("embedding has non-finite components")
    return v
