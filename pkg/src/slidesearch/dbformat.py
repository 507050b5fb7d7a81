"""Embedding database wire format and its in-memory columnar table.

File layout (all little-endian):
  header:  magic "SMLY" | version u32 | dim u32 | name_len u16 |
           embedder name (UTF-8) | entry count u64
  records: patch_id u64 | slide_id u32 | mag u8 | orientation u8 |
           x u32 | y u32 | side u16 | dim * f32

Records are written in canonical (patch_id, orientation) order so that
identical build inputs serialize to identical bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import MAG_FROM_CODE, Magnification, MAG_CODES, Orientation
from .errors import FormatError, ValidationError

MAGIC = b"SMLY"
VERSION = 1

_HEADER_FIXED = struct.Struct("<4sIIH")  # magic, version, dim, name_len
_COUNT = struct.Struct("<Q")


def record_dtype(dim: int) -> np.dtype:
    return np.dtype([
        ("patch_id", "<u8"),
        ("slide_id", "<u4"),
        ("mag", "u1"),
        ("orientation", "u1"),
        ("x", "<u4"),
        ("y", "<u4"),
        ("side", "<u2"),
        ("vec", "<f4", (dim,)),
    ])


def header_size(embedder_name: str) -> int:
    return _HEADER_FIXED.size + len(embedder_name.encode()) + _COUNT.size


@dataclass(frozen=True)
class DbHeader:
    version: int
    dim: int
    embedder_name: str
    count: int


@dataclass(frozen=True)
class IndexEntry:
    """One (patch, orientation) row, materialized for API edges."""

    patch_id: int
    slide_id: int
    magnification: Magnification
    orientation: Orientation
    x: int
    y: int
    side_px: int
    embedding: np.ndarray


class EntryTable:
    """Columnar set of index entries. Immutable by convention: build it,
    then share it freely across threads."""

    __slots__ = ("patch_id", "slide_id", "mag", "orientation",
                 "x", "y", "side", "vecs")

    def __init__(self, patch_id, slide_id, mag, orientation, x, y, side, vecs):
        self.patch_id = np.asarray(patch_id, dtype=np.uint64)
        self.slide_id = np.asarray(slide_id, dtype=np.uint32)
        self.mag = np.asarray(mag, dtype=np.uint8)
        self.orientation = np.asarray(orientation, dtype=np.uint8)
        self.x = np.asarray(x, dtype=np.uint32)
        self.y = np.asarray(y, dtype=np.uint32)
        self.side = np.asarray(side, dtype=np.uint16)
        self.vecs = np.ascontiguousarray(vecs, dtype=np.float32)
        n = len(self.patch_id)
        if self.vecs.ndim != 2 or self.vecs.shape[0] != n:
            raise ValidationError("vecs must be (n, dim) matching id count")
        for arr in (self.slide_id, self.mag, self.orientation,
                    self.x, self.y, self.side):
            if arr.shape != (n,):
                raise ValidationError("column lengths disagree")

    def __len__(self) -> int:
        return len(self.patch_id)

    @property
    def dim(self) -> int:
        return self.vecs.shape[1]

    def row(self, i: int) -> IndexEntry:
        return IndexEntry(
            patch_id=int(self.patch_id[i]),
            slide_id=int(self.slide_id[i]),
            magnification=MAG_FROM_CODE[int(self.mag[i])],
            orientation=Orientation(int(self.orientation[i])),
            x=int(self.x[i]),
            y=int(self.y[i]),
            side_px=int(self.side[i]),
            embedding=self.vecs[i],
        )

    def take(self, idx) -> "EntryTable":
        idx = np.asarray(idx)
        return EntryTable(
            self.patch_id[idx], self.slide_id[idx], self.mag[idx],
            self.orientation[idx], self.x[idx], self.y[idx],
            self.side[idx], self.vecs[idx],
        )

    def canonical_order(self) -> "EntryTable":
        order = np.lexsort((self.orientation, self.patch_id))
        return self.take(order)

    def check_unique(self) -> None:
        keys = self.patch_id.astype(np.uint64) * np.uint64(8) \
            + self.orientation.astype(np.uint64)
        if len(np.unique(keys)) != len(keys):
            raise ValidationError("duplicate (patch_id, orientation) entries")

    @classmethod
    def empty(cls, dim: int) -> "EntryTable":
        z = np.zeros(0)
        return cls(z, z, z, z, z, z, z, np.zeros((0, dim), dtype=np.float32))

    @classmethod
    def concat(cls, tables: list["EntryTable"]) -> "EntryTable":
        if not tables:
            raise ValidationError("nothing to concatenate")
        return cls(*[
            np.concatenate([getattr(t, name) for t in tables])
            for name in ("patch_id", "slide_id", "mag", "orientation",
                         "x", "y", "side", "vecs")
        ])

    @classmethod
    def from_records(cls, patches, oriented_vecs) -> "EntryTable":
        """Build from parallel lists of PatchRecord and
        {Orientation: vec} mappings."""
        pid, sid, mag, ori, xs, ys, side, vecs = [], [], [], [], [], [], [], []
        for p, ovecs in zip(patches, oriented_vecs, strict=True):
            for o in Orientation:
                pid.append(p.patch_id)
                sid.append(p.slide_id)
                mag.append(MAG_CODES[p.magnification])
                ori.append(int(o))
                xs.append(p.x)
                ys.append(p.y)
                side.append(p.side_px)
                vecs.append(ovecs[o])
        return cls(pid, sid, mag, ori, xs, ys, side,
                   np.stack(vecs) if vecs else np.zeros((0, 0), np.float32))

    def to_structured(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=record_dtype(self.dim))
        rec["patch_id"] = self.patch_id
        rec["slide_id"] = self.slide_id
        rec["mag"] = self.mag
        rec["orientation"] = self.orientation
        rec["x"] = self.x
        rec["y"] = self.y
        rec["side"] = self.side
        rec["vec"] = self.vecs
        return rec

    @classmethod
    def from_structured(cls, rec: np.ndarray) -> "EntryTable":
        return cls(rec["patch_id"], rec["slide_id"], rec["mag"],
                   rec["orientation"], rec["x"], rec["y"], rec["side"],
                   rec["vec"])


def write_db(path, table: EntryTable, embedder_name: str) -> None:
    """Serialize in canonical order; byte-identical for identical input."""
    table = table.canonical_order()
    name = embedder_name.encode()
    if len(name) > 0xFFFF:
        raise ValidationError("embedder name too long")
    with open(path, "wb") as f:
        f.write(_HEADER_FIXED.pack(MAGIC, VERSION, table.dim, len(name)))
        f.write(name)
        f.write(_COUNT.pack(len(table)))
        table.to_structured().tofile(f)


def read_db(path) -> tuple[DbHeader, EntryTable]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from None
    if len(raw) < _HEADER_FIXED.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, name_len = _HEADER_FIXED.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = _HEADER_FIXED.size
    if len(raw) < off + name_len + _COUNT.size:
        raise FormatError(f"{path}: truncated header")
    name = raw[off:off + name_len].decode()
    off += name_len
    (count,) = _COUNT.unpack_from(raw, off)
    off += _COUNT.size
    dtype = record_dtype(dim)
    expected = off + count * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{path}: size {len(raw)} != header + {count} * "
            f"{dtype.itemsize} = {expected}"
        )
    rec = np.frombuffer(raw, dtype=dtype, count=count, offset=off)
    table = EntryTable.from_structured(rec)
    return DbHeader(version, dim, name, count), table
