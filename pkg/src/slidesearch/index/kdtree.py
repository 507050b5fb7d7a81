"""Depth-limited k-d tree with exact branch-and-bound search.

Splits use the maximum-variance dimension and its lower median; the depth
limit (default 6) means deep leaves simply hold more than ``leaf_target``
entries and are scanned linearly. Search never prunes a subtree whose
boundary distance ties the current m-th best, so results are identical to
the brute-force oracle under the canonical tie-break.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .search_common import ShardData, canonical_top, check_query_dim


@dataclass
class _Node:
    split_dim: int
    threshold: float
    left: object
    right: object


@dataclass
class _Leaf:
    rows: np.ndarray  # local row indices
    block: np.ndarray  # float64 copy of the rows' vectors, scan-ready


class KdTree:
    def __init__(self, data: ShardData, max_depth: int = 6,
                 leaf_target: int = 40):
        if len(data) == 0:
            raise ValidationError("cannot build a k-d tree over no entries")
        if max_depth < 0 or leaf_target < 1:
            raise ValidationError("bad k-d tree parameters")
        self.data = data
        self.max_depth = max_depth
        self.leaf_target = leaf_target
        vecs64 = data.vecs.astype(np.float64)
        self.root = self._build(vecs64, np.arange(len(data), dtype=np.intp),
                                0)

    def _build(self, vecs64: np.ndarray, rows: np.ndarray, depth: int):
        if len(rows) <= self.leaf_target or depth >= self.max_depth:
            return _Leaf(rows, vecs64[rows])
        sub = vecs64[rows]
        var = sub.var(axis=0)
        dim = int(np.argmax(var))
        if var[dim] == 0.0:
            return _Leaf(rows, sub)  # all entries identical: nothing to split
        vals = sub[:, dim]
        k = (len(vals) - 1) // 2
        threshold = float(np.partition(vals, k)[k])  # lower median
        mask = vals <= threshold
        if mask.all() or not mask.any():
            return _Leaf(rows, sub)  # degenerate split (median == max)
        return _Node(
            split_dim=dim,
            threshold=threshold,
            left=self._build(vecs64, rows[mask], depth + 1),
            right=self._build(vecs64, rows[~mask], depth + 1),
        )

    def leaves(self) -> list[np.ndarray]:
        out = []

        def walk(node):
            if isinstance(node, _Leaf):
                out.append(node.rows)
            else:
                walk(node.left)
                walk(node.right)

        walk(self.root)
        return out

    def depth(self) -> int:
        def walk(node):
            if isinstance(node, _Leaf):
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def search(self, q: np.ndarray, m: int
               ) -> tuple[np.ndarray, np.ndarray]:
        """Exact m nearest entries: (global rows, squared distances)."""
        if m <= 0:
            raise ValidationError("m must be positive")
        q64 = check_query_dim(q, self.data.dim)
        pool_rows: list[np.ndarray] = []
        pool_d2: list[np.ndarray] = []
        # best_d2 tracks the m smallest distances seen (plus ties at the
        # boundary) purely to maintain the prune bound
        state = {"bound": np.inf, "best": None}

        def scan(leaf: _Leaf):
            diff = leaf.block - q64
            d2 = np.einsum("nd,nd->n", diff, diff)
            bound = state["bound"]
            if bound != np.inf:
                keep = d2 <= bound
                rows, d2 = leaf.rows[keep], d2[keep]
            else:
                rows = leaf.rows
            if len(rows) == 0:
                return
            pool_rows.append(rows)
            pool_d2.append(d2)
            best = state["best"]
            merged = d2 if best is None else np.concatenate([best, d2])
            if len(merged) >= m:
                kth = np.partition(merged, m - 1)[m - 1]
                state["bound"] = float(kth)
                merged = merged[merged <= kth]
            state["best"] = merged

        def visit(node):
            if isinstance(node, _Leaf):
                scan(node)
                return
            diff = q64[node.split_dim] - node.threshold
            near, far = ((node.left, node.right) if diff <= 0
                         else (node.right, node.left))
            visit(near)
            # equal boundary distance may still hold a tie-break winner
            if diff * diff <= state["bound"]:
                visit(far)

        visit(self.root)
        rows = np.concatenate(pool_rows)
        d2 = np.concatenate(pool_d2)
        keep = d2 <= state["bound"]
        rows, d2 = rows[keep], d2[keep]
        sel = canonical_top(d2, self.data.patch_id[rows],
                            self.data.orientation[rows], m)
        return self.data.global_rows[rows[sel]], d2[sel]
