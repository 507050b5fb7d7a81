"""Distance computation and the canonical result ordering.

Every search path — kd tree, hash buckets, and the brute-force oracle —
funnels through the same squared-distance helper and the same
(distance, patch_id, orientation) tie-break, so exact paths return
bit-identical results no matter which structure produced them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dbformat import EntryTable
from ..errors import DimMismatchError, ValidationError


def check_query_dim(q: np.ndarray, dim: int) -> np.ndarray:
    q = np.asarray(q)
    if q.ndim != 1 or q.shape[0] != dim:
        raise DimMismatchError(
            f"query dim {q.shape} does not match index dim {dim}"
        )
    return q.astype(np.float64)


def squared_l2(block: np.ndarray, q64: np.ndarray) -> np.ndarray:
    """Per-row squared L2 distance, accumulated in float64.

    The einsum reduction runs in a fixed order per row, so a row's
    distance is bit-identical no matter how rows were batched — every
    search path (kd leaf scan, hash bucket scan, brute force) must go
    through this exact formula.
    """
    d = block.astype(np.float64) - q64
    return np.einsum("nd,nd->n", d, d)


def canonical_top(d2: np.ndarray, patch_ids: np.ndarray,
                  orientations: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m best candidates under the canonical tie-break."""
    order = np.lexsort((orientations, patch_ids, d2))
    return order[:m]


@dataclass
class ShardData:
    """One shard's slice of the entry table, with global row numbers so
    results from different shards merge directly."""

    vecs: np.ndarray
    patch_id: np.ndarray
    orientation: np.ndarray
    global_rows: np.ndarray

    @classmethod
    def from_table(cls, table: EntryTable, rows: np.ndarray) -> "ShardData":
        rows = np.asarray(rows, dtype=np.intp)
        return cls(
            vecs=table.vecs[rows],
            patch_id=table.patch_id[rows],
            orientation=table.orientation[rows],
            global_rows=rows,
        )

    def __len__(self) -> int:
        return len(self.global_rows)

    @property
    def dim(self) -> int:
        return self.vecs.shape[1]


def brute_force_search(table: EntryTable, q: np.ndarray, m: int
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive scan: ground truth for every other search path.

    Returns (global rows, squared distances) for the m nearest entries
    under the canonical tie-break.
    """
    if len(table) == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0)
    if m <= 0:
        raise ValidationError("m must be positive")
    q64 = check_query_dim(q, table.dim)
    d2 = squared_l2(table.vecs, q64)
    sel = canonical_top(d2, table.patch_id, table.orientation, m)
    return sel.astype(np.intp), d2[sel]
