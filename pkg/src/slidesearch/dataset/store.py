"""On-disk tile store: a manifest plus one PNG per tile.

Layout: ``<root>/manifest.json`` and
``<root>/<slide_id>/<downsample>/<ty>_<tx>.png`` (8-bit RGB). Edge tiles
are clipped to the level bounds, so the grid covers the declared
dimensions exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..core import Magnification, SlideRef
from ..errors import DataError, FormatError, ValidationError

# deterministic PNG bytes at low CPU cost; noise tiles barely compress anyway
_PNG_OPTS = dict(compress_level=1, optimize=False)


class SlideStore:
    """Read-only view of a tile store. Safe to share across threads."""

    def __init__(self, root: Path, tile_size: int,
                 slides: dict[int, SlideRef]):
        self.root = Path(root)
        self.tile_size = tile_size
        self.slides = slides

    @classmethod
    def load(cls, root) -> "SlideStore":
        root = Path(root)
        manifest = root / "manifest.json"
        if not manifest.is_file():
            raise DataError(f"no manifest at {manifest}")
        doc = json.loads(manifest.read_text())
        tile_size = int(doc["tile_size"])
        slides = {}
        for s in doc["slides"]:
            levels = []
            for lv in s["levels"]:
                mag = Magnification[lv["magnification"]]
                if mag.downsample != lv["downsample"]:
                    raise FormatError(
                        f"manifest pairs {lv['magnification']} with "
                        f"downsample {lv['downsample']}"
                    )
                levels.append(mag)
            ref = SlideRef(
                slide_id=int(s["slide_id"]),
                name=s["name"],
                base_width_px=int(s["base_width_px"]),
                base_height_px=int(s["base_height_px"]),
                tile_size_px=tile_size,
                levels=tuple(levels),
            )
            slides[ref.slide_id] = ref
        return cls(root, tile_size, slides)

    def slide(self, slide_id: int) -> SlideRef:
        try:
            return self.slides[slide_id]
        except KeyError:
            raise DataError(f"unknown slide_id {slide_id}") from None

    def tile_path(self, slide_id: int, downsample: int,
                  tx: int, ty: int) -> Path:
        return self.root / str(slide_id) / str(downsample) / f"{ty}_{tx}.png"

    def read_tile(self, slide_id: int, downsample: int,
                  tx: int, ty: int) -> np.ndarray:
        path = self.tile_path(slide_id, downsample, tx, ty)
        if not path.is_file():
            raise DataError(f"missing tile {path}")
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))

    def read_region(self, slide_id: int, mag: Magnification,
                    x: int, y: int, w: int, h: int) -> np.ndarray:
        """Stitch a region. ``x``/``y`` are base pixels aligned to the
        level's downsample; ``w``/``h`` are level pixels."""
        slide = self.slide(slide_id)
        if mag not in slide.levels:
            raise DataError(
                f"slide {slide_id} has no {mag.name} level"
            )
        ds = mag.downsample
        if x % ds or y % ds:
            raise ValidationError(
                f"region origin ({x}, {y}) not aligned to downsample {ds}"
            )
        if w <= 0 or h <= 0:
            raise ValidationError("region dimensions must be positive")
        lx, ly = x // ds, y // ds
        lw, lh = slide.level_size(mag)
        if lx < 0 or ly < 0 or lx + w > lw or ly + h > lh:
            raise ValidationError(
                f"region ({lx}, {ly}) {w}x{h} outside level bounds {lw}x{lh}"
            )
        t = self.tile_size
        out = np.empty((h, w, 3), dtype=np.uint8)
        for ty in range(ly // t, (ly + h - 1) // t + 1):
            for tx in range(lx // t, (lx + w - 1) // t + 1):
                tile = self.read_tile(slide_id, ds, tx, ty)
                # overlap of this tile with the requested region
                y0 = max(ly, ty * t)
                y1 = min(ly + h, ty * t + tile.shape[0])
                x0 = max(lx, tx * t)
                x1 = min(lx + w, tx * t + tile.shape[1])
                out[y0 - ly:y1 - ly, x0 - lx:x1 - lx] = \
                    tile[y0 - ty * t:y1 - ty * t, x0 - tx * t:x1 - tx * t]
        return out

    def iter_tile_paths(self):
        for slide in self.slides.values():
            for mag in slide.levels:
                ds = mag.downsample
                lw, lh = slide.level_size(mag)
                t = self.tile_size
                for ty in range(-(-lh // t)):
                    for tx in range(-(-lw // t)):
                        yield self.tile_path(slide.slide_id, ds, tx, ty)

    def image_bytes(self) -> int:
        return sum(p.stat().st_size for p in self.iter_tile_paths())


class StoreWriter:
    """Writes slides into the store layout, tiling each level."""

    def __init__(self, root, tile_size: int):
        self.root = Path(root)
        self.tile_size = tile_size
        self._slides: list[SlideRef] = []

    def write_level(self, slide: SlideRef, mag: Magnification,
                    pixels: np.ndarray) -> None:
        ds = mag.downsample
        lw, lh = slide.level_size(mag)
        if pixels.shape != (lh, lw, 3):
            raise ValidationError(
                f"level pixels {pixels.shape} != expected ({lh}, {lw}, 3)"
            )
        t = self.tile_size
        level_dir = self.root / str(slide.slide_id) / str(ds)
        level_dir.mkdir(parents=True, exist_ok=True)
        for ty in range(-(-lh // t)):
            for tx in range(-(-lw // t)):
                tile = pixels[ty * t:(ty + 1) * t, tx * t:(tx + 1) * t]
                Image.fromarray(tile).save(
                    level_dir / f"{ty}_{tx}.png", **_PNG_OPTS
                )

    def add_slide(self, slide: SlideRef) -> None:
        self._slides.append(slide)

    def finish(self) -> SlideStore:
        doc = {
            "tile_size": self.tile_size,
            "slides": [
                {
                    "slide_id": s.slide_id,
                    "name": s.name,
                    "base_width_px": s.base_width_px,
                    "base_height_px": s.base_height_px,
                    "levels": [
                        {"magnification": m.name, "downsample": m.downsample}
                        for m in s.levels
                    ],
                }
                for s in sorted(self._slides, key=lambda s: s.slide_id)
            ],
        }
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "manifest.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n"
        )
        return SlideStore.load(self.root)
