"""Exact top-K nearest-descriptor search over the map's global descriptors.

Brute-force cosine similarity on unit-normalized vectors (equivalent to a
dot product).  Correctness first: no approximate structures; ties resolve
by ascending entry id so results are a total order independent of any scan
strategy.
"""

from __future__ import annotations

import numpy as np

__all__ = ["DescriptorIndex"]


class DescriptorIndex:
    """Immutable-after-build index of unit-normalized float32 descriptors."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"descriptor dimension must be >= 1, got {dim}")
        self.dim = int(dim)
        self._ids: list[str] = []
        self._vectors: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None
        self._rank: np.ndarray | None = None

    @classmethod
    def from_entries(cls, entries) -> "DescriptorIndex":
        """Build from (id, vector) pairs; vectors may be float16 storage."""
        index = None
        for eid, vec in entries:
            if index is None:
                index = cls(np.asarray(vec).shape[-1])
            index.add(eid, vec)
        return index if index is not None else cls(1)

    @property
    def size(self) -> int:
        return len(self._ids)

    def add(self, entry_id: str, vector: np.ndarray) -> "DescriptorIndex":
        """Add a descriptor; it is L2-normalized before storage."""
        v = np.asarray(vector, dtype=np.float32).reshape(-1)
        if v.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: index is {self.dim}-d, vector is {v.shape[0]}-d")
        norm = float(np.linalg.norm(v.astype(np.float64)))
        if norm == 0.0 or not np.isfinite(norm):
            raise ValueError(f"cannot index zero or non-finite vector for id {entry_id!r}")
        if entry_id in self._ids:
            raise ValueError(f"duplicate id {entry_id!r}")
        self._ids.append(entry_id)
        self._vectors.append((v.astype(np.float64) / norm).astype(np.float32))
        self._matrix = None
        return self

    def _ensure_built(self) -> None:
        if self._matrix is None:
            self._matrix = np.stack(self._vectors).astype(np.float64)
            order = sorted(range(len(self._ids)), key=lambda i: self._ids[i])
            rank = np.empty(len(self._ids), dtype=np.int64)
            for r, i in enumerate(order):
                rank[i] = r
            self._rank = rank

    def topk(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Exactly min(k, size) (id, cosine) pairs, best first, ties by id."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: index is {self.dim}-d, query is {q.shape[0]}-d")
        if not self._ids:
            return []
        norm = float(np.linalg.norm(q))
        if norm == 0.0 or not np.isfinite(norm):
            raise ValueError("query vector must be non-zero and finite")
        self._ensure_built()
        sims = self._matrix @ (q / norm)
        # Primary key: similarity descending; secondary: id ascending.
        order = np.lexsort((self._rank, -sims))[: min(k, len(self._ids))]
        return [(self._ids[i], float(sims[i])) for i in order]

    def ids(self) -> list[str]:
        return list(self._ids)
