"""Exact cosine nearest-neighbour index: a kd-tree over unit vectors.

On the unit sphere ``|x - q|^2 = 2 - 2 x.q``, so Euclidean box bounds prune
the cosine search. Points inserted after the last build sit in a small
overflow list that is scanned linearly; the tree is rebuilt once the overflow
outgrows the built part.
"""

from __future__ import annotations

import bisect
from typing import Iterable

import numpy as np

from ..errors import DuplicateId, UnknownNode, ZeroVector

LEAF_SIZE = 16
_SLACK = 1e-9


def normalize(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    n = float(np.linalg.norm(z))
    if n == 0.0 or not np.isfinite(n):
        raise ZeroVector("cannot index a zero or non-finite vector")
    return z / n


def _dots(rows: np.ndarray, q: np.ndarray) -> np.ndarray:
    # row-wise reduction so a row's score never depends on which batch it sits in
    return (rows * q).sum(axis=1)


class _Node:
    __slots__ = ("lo", "hi", "start", "end", "left", "right")

    def __init__(self, lo, hi, start, end):
        self.lo, self.hi, self.start, self.end = lo, hi, start, end
        self.left = self.right = None


def _gap(node: _Node, q: np.ndarray) -> float:
    """Squared Euclidean distance from ``q`` to the node's bounding box."""
    g = np.maximum(node.lo - q, 0.0) + np.maximum(q - node.hi, 0.0)
    return float(g @ g)


class VectorIndex:
    def __init__(self, dim: int):
        self.dim = int(dim)
        self._ids: list[str] = []
        self._rows: dict[str, int] = {}
        self._buf = np.zeros((LEAF_SIZE, self.dim))
        self._perm = np.zeros(0, dtype=np.int64)
        self._root: _Node | None = None
        self._built = 0

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def _vecs(self) -> np.ndarray:
        return self._buf[: len(self._ids)]

    def __contains__(self, item: str) -> bool:
        return item in self._rows

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    def vector(self, item: str) -> np.ndarray:
        try:
            return self._vecs[self._rows[item]].copy()
        except KeyError:
            raise UnknownNode(f"{item!r} is not indexed") from None

    def insert(self, item: str, z: np.ndarray) -> None:
        if item in self._rows:
            raise DuplicateId(f"{item!r} already indexed")
        u = normalize(z)
        if u.size != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {u.size}")
        n = len(self._ids)
        if n == self._buf.shape[0]:
            self._buf = np.vstack([self._buf, np.zeros_like(self._buf)])
        self._buf[n] = u
        self._rows[item] = n
        self._ids.append(item)
        if len(self._ids) - self._built > max(self._built, LEAF_SIZE):
            self._build()

    def update(self, item: str, z: np.ndarray) -> None:
        """Replace a stored vector; the tree is rebuilt before the next query."""
        if item not in self._rows:
            raise UnknownNode(f"{item!r} is not indexed")
        self._vecs[self._rows[item]] = normalize(z)
        self._root, self._built = None, 0

    def _build(self) -> None:
        n = len(self._ids)
        self._perm = np.arange(n)
        self._built = n
        self._root = self._split(0, n) if n else None

    def _split(self, start: int, end: int) -> _Node:
        pts = self._vecs[self._perm[start:end]]
        node = _Node(pts.min(axis=0), pts.max(axis=0), start, end)
        if end - start > LEAF_SIZE:
            axis = int(np.argmax(node.hi - node.lo))
            order = np.argsort(pts[:, axis], kind="stable")
            self._perm[start:end] = self._perm[start:end][order]
            mid = (start + end) // 2
            node.left = self._split(start, mid)
            node.right = self._split(mid, end)
        return node

    def knn(self, zq: np.ndarray, m: int) -> list[tuple[str, float]]:
        """The ``m`` ids with the largest cosine to ``zq`` as ``(id, cosine)``,
        best first; equal cosines are ordered by id."""
        q = normalize(zq)
        if m <= 0 or not self._ids:
            return []
        if self._root is None and self._built == 0:
            self._build()
        best: list[tuple[float, str]] = []  # sorted by (-cos, id)

        def offer(rows: np.ndarray) -> None:
            dots = _dots(self._vecs[rows], q)
            for r, d in zip(rows, dots):
                key = (-float(d), self._ids[r])
                if len(best) < m:
                    bisect.insort(best, key)
                elif key < best[-1]:
                    bisect.insort(best, key)
                    best.pop()

        def visit(node: _Node) -> None:
            if len(best) == m:
                if 1.0 - 0.5 * _gap(node, q) < -best[-1][0] - _SLACK:
                    return
            if node.left is None:
                offer(self._perm[node.start:node.end])
                return
            first, second = node.left, node.right
            if _gap(second, q) < _gap(first, q):
                first, second = second, first
            visit(first)
            visit(second)

        if self._root is not None:
            visit(self._root)
        if self._built < len(self._ids):
            offer(np.arange(self._built, len(self._ids)))
        return [(i, -neg) for neg, i in best]

    def linear_knn(self, zq: np.ndarray, m: int) -> list[tuple[str, float]]:
        """Brute-force reference with the same ordering as :meth:`knn`."""
        q = normalize(zq)
        dots = _dots(self._vecs, q)
        keys = sorted((-float(d), i) for d, i in zip(dots, self._ids))
        return [(i, -neg) for neg, i in keys[: max(m, 0)]]

    def to_dict(self) -> dict:
        return {"dim": self.dim, "ids": list(self._ids), "vectors": self._vecs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "VectorIndex":
        idx = cls(d["dim"])
        idx._ids = list(d["ids"])
        idx._rows = {k: i for i, k in enumerate(idx._ids)}
        vecs = np.asarray(d["vectors"], dtype=np.float64).reshape(len(idx._ids), idx.dim)
        idx._buf = np.vstack([vecs, np.zeros((LEAF_SIZE, idx.dim))])
        idx._build()
        return idx

    @classmethod
    def from_items(cls, dim: int, items: Iterable[tuple[str, np.ndarray]]) -> "VectorIndex":
        idx = cls(dim)
        for k, z in items:
            idx.insert(k, z)
        return idx
