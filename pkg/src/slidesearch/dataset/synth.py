"""Synthetic labeled-slide generator.

Produces a tile store plus rectangular single-class annotations, giving
desk-scale experiments a fully known ground truth. Each class is a striped
color field with additive noise; distinct base colors and stripe geometry
keep classes separable, while the noise keeps patches distinct. Everything
is seeded: the same spec writes byte-identical tiles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import Magnification, SlideRef
from ..errors import ValidationError
from .annotations import AnnotationRegion
from .store import SlideStore, StoreWriter


@dataclass(frozen=True)
class ClassSpec:
    name: str
    base_color: tuple[int, int, int]
    stripe_period_px: float
    stripe_angle_deg: float
    noise_amplitude: float
    stripe_amplitude: float = 40.0
    label_kind: str = "histologic_feature"

    def params(self) -> tuple:
        return (self.base_color, self.stripe_period_px,
                self.stripe_angle_deg, self.noise_amplitude,
                self.stripe_amplitude)


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    n_slides: int
    classes: tuple[ClassSpec, ...]
    regions_per_slide: int
    slide_width_px: int
    slide_height_px: int
    tile_size_px: int = 512
    levels: tuple[Magnification, ...] = (
        Magnification.M40X, Magnification.M20X,
        Magnification.M10X, Magnification.M5X,
    )
    region_margin_px: int = 64
    region_align_px: int = 8
    background_value: int = 240
    slide_organs: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "slide_organs", tuple(self.slide_organs))
        if len(self.classes) < 2:
            raise ValidationError("need at least 2 classes")
        seen = {}
        for c in self.classes:
            if c.params() in seen:
                raise ValidationError(
                    f"classes {seen[c.params()]!r} and {c.name!r} share "
                    f"identical texture parameters"
                )
            seen[c.params()] = c.name
        if len({c.name for c in self.classes}) != len(self.classes):
            raise ValidationError("class names must be unique")
        if self.n_slides < 1 or self.regions_per_slide < 1:
            raise ValidationError("need at least one slide and one region")
        max_ds = max(m.downsample for m in self.levels)
        for dim in (self.slide_width_px, self.slide_height_px):
            if dim <= 0 or dim % max_ds:
                raise ValidationError(
                    f"slide dimensions must be positive multiples of the "
                    f"deepest downsample ({max_ds})"
                )

    @classmethod
    def from_json(cls, doc: dict) -> "SynthSpec":
        classes = tuple(
            ClassSpec(
                name=c["name"],
                base_color=tuple(c["base_color"]),
                stripe_period_px=c["stripe_period_px"],
                stripe_angle_deg=c["stripe_angle_deg"],
                noise_amplitude=c["noise_amplitude"],
                stripe_amplitude=c.get("stripe_amplitude", 40.0),
                label_kind=c.get("label_kind", "histologic_feature"),
            )
            for c in doc["classes"]
        )
        kwargs = dict(
            seed=doc["seed"],
            n_slides=doc["n_slides"],
            classes=classes,
            regions_per_slide=doc["regions_per_slide"],
            slide_width_px=doc["slide_width_px"],
            slide_height_px=doc["slide_height_px"],
        )
        if "tile_size_px" in doc:
            kwargs["tile_size_px"] = doc["tile_size_px"]
        if "levels" in doc:
            kwargs["levels"] = tuple(
                Magnification[name] for name in doc["levels"]
            )
        for opt in ("region_margin_px", "region_align_px",
                    "background_value"):
            if opt in doc:
                kwargs[opt] = doc[opt]
        if "slide_organs" in doc:
            kwargs["slide_organs"] = tuple(doc["slide_organs"])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "SynthSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


def _region_grid(spec: SynthSpec) -> list[tuple[int, int, int, int]]:
    """Rectangles (x0, y0, x1, y1) in base px for one slide's regions."""
    n = spec.regions_per_slide
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    cw = spec.slide_width_px // cols
    ch = spec.slide_height_px // rows
    a = spec.region_align_px
    rects = []
    for i in range(n):
        r, c = divmod(i, cols)
        x0 = -(-(c * cw + spec.region_margin_px) // a) * a
        y0 = -(-(r * ch + spec.region_margin_px) // a) * a
        x1 = ((c + 1) * cw - spec.region_margin_px) // a * a
        y1 = ((r + 1) * ch - spec.region_margin_px) // a * a
        if x1 - x0 < a or y1 - y0 < a:
            raise ValidationError(
                f"slide {spec.slide_width_px}x{spec.slide_height_px} too "
                f"small for {n} regions with margin {spec.region_margin_px}"
            )
        rects.append((x0, y0, x1, y1))
    return rects


def _render_texture(cls: ClassSpec, x0: int, y0: int, x1: int, y1: int,
                    rng: np.random.Generator) -> np.ndarray:
    h, w = y1 - y0, x1 - x0
    xs = np.arange(x0, x1, dtype=np.float64)[None, :]
    ys = np.arange(y0, y1, dtype=np.float64)[:, None]
    theta = math.radians(cls.stripe_angle_deg)
    phase = (xs * math.cos(theta) + ys * math.sin(theta)) \
        / cls.stripe_period_px
    wave = np.sin(2.0 * np.pi * phase)
    out = np.empty((h, w, 3), dtype=np.float64)
    for ch in range(3):
        out[:, :, ch] = cls.base_color[ch] + cls.stripe_amplitude * wave
    if cls.noise_amplitude > 0:
        amp = int(round(cls.noise_amplitude))
        out += rng.integers(-amp, amp + 1, size=(h, w, 3))
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _halve(img: np.ndarray) -> np.ndarray:
    """2x box-filter downsample with round-half-up integer arithmetic."""
    h, w = img.shape[:2]
    s = img.reshape(h // 2, 2, w // 2, 2, 3).sum(axis=(1, 3),
                                                 dtype=np.uint32)
    return ((s + 2) >> 2).astype(np.uint8)


def generate_synthetic(spec: SynthSpec, root
                       ) -> tuple[SlideStore, list[AnnotationRegion]]:
    """Render slides, write the tile pyramid, and return the store plus
    the generating annotations (one rectangle per region)."""
    root = Path(root)
    writer = StoreWriter(root, spec.tile_size_px)
    annotations: list[AnnotationRegion] = []
    rects = _region_grid(spec)

    for slide_id in range(spec.n_slides):
        slide = SlideRef(
            slide_id=slide_id,
            name=f"slide-{slide_id:03d}",
            base_width_px=spec.slide_width_px,
            base_height_px=spec.slide_height_px,
            tile_size_px=spec.tile_size_px,
            levels=spec.levels,
        )
        base = np.full(
            (spec.slide_height_px, spec.slide_width_px, 3),
            spec.background_value, dtype=np.uint8,
        )
        for ri, (x0, y0, x1, y1) in enumerate(rects):
            cls = spec.classes[
                (slide_id * spec.regions_per_slide + ri) % len(spec.classes)
            ]
            rng = np.random.default_rng(
                np.random.SeedSequence([spec.seed, slide_id, ri])
            )
            base[y0:y1, x0:x1] = _render_texture(cls, x0, y0, x1, y1, rng)
            annotations.append(AnnotationRegion(
                slide_id=slide_id,
                label=cls.name,
                label_kind=cls.label_kind,
                polygon=((x0, y0), (x1, y0), (x1, y1), (x0, y1)),
            ))
        if spec.slide_organs:
            organ = spec.slide_organs[slide_id % len(spec.slide_organs)]
            annotations.append(AnnotationRegion(
                slide_id=slide_id,
                label=organ,
                label_kind="organ",
                polygon=(
                    (0, 0), (spec.slide_width_px, 0),
                    (spec.slide_width_px, spec.slide_height_px),
                    (0, spec.slide_height_px),
                ),
            ))

        level = base
        ds = 1
        if Magnification.M40X in spec.levels:
            writer.write_level(slide, Magnification.M40X, level)
        max_ds = max(m.downsample for m in spec.levels)
        while ds < max_ds:
            level = _halve(level)
            ds *= 2
            mag = Magnification(ds)
            if mag in spec.levels:
                writer.write_level(slide, mag, level)
        writer.add_slide(slide)

    store = writer.finish()
    return store, annotations
