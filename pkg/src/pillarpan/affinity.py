"""Traversal order over pillars, binary affinity label generation, and the
full pairwise-affinity oracle used to validate the reduction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClassTable, GridSpec, label_class

# Largest grid the pairwise oracle will accept; it materializes an
# (H*W) x (H*W) matrix and exists only to cross-check the scan path.
HOLISTIC_MAX_PILLARS = 4096


@dataclass(frozen=True)
class TraversalOrder:
    """Total order over grid cells defining which pillars are "previous".

    The default is plain raster order (b ascending within each a): position
    t = a * W + b.  The serpentine variant reverses b on odd rows and exists
    for experimentation only.
    """

    h: int
    w: int
    serpentine: bool = False

    def index(self, a: int, b: int) -> int:
        if not (0 <= a < self.h and 0 <= b < self.w):
            raise IndexError(f"pillar ({a}, {b}) outside {self.h}x{self.w} grid")
        if self.serpentine and a % 2 == 1:
            return a * self.w + (self.w - 1 - b)
        return a * self.w + b

    def coords(self, t: int) -> tuple[int, int]:
        if not 0 <= t < self.h * self.w:
            raise IndexError(f"position {t} outside grid of {self.h * self.w} pillars")
        a, b = divmod(t, self.w)
        if self.serpentine and a % 2 == 1:
            b = self.w - 1 - b
        return a, b

    def permutation(self) -> np.ndarray:
        """perm[t] = flat raster index of the pillar at traversal position t."""
        idx = np.arange(self.h * self.w).reshape(self.h, self.w)
        if self.serpentine:
            idx[1::2] = idx[1::2, ::-1]
        return idx.reshape(-1)


def traversal_index(a: int, b: int, spec: GridSpec) -> int:
    """Linear traversal position of pillar (a, b) in the default order."""
    return TraversalOrder(spec.h, spec.w).index(a, b)


def generate_affinity_labels(panoptic: np.ndarray, classes: ClassTable,
                             order: TraversalOrder | None = None) -> np.ndarray:
    """Binary affinity raster from a packed panoptic raster.

    Walking the grid in traversal order, the first pillar of each thing
    instance gets 0, every later pillar of an already-visited instance gets 1.
    Stuff, empty and ignore pillars are 0.
    """
    panoptic = np.asarray(panoptic)
    h, w = panoptic.shape
    if order is None:
        order = TraversalOrder(h, w)
    perm = order.permutation()
    seq = panoptic.reshape(-1)[perm]

    thing = classes.thing_mask()[label_class(seq)] & (seq != 0)
    aff_seq = np.zeros(seq.shape, dtype=np.uint8)
    pos = np.flatnonzero(thing)
    if len(pos):
        # np.unique returns the first occurrence of each id in scan order
        _, first = np.unique(seq[pos], return_index=True)
        aff_seq[pos] = 1
        aff_seq[pos[first]] = 0

    aff = np.zeros(h * w, dtype=np.uint8)
    aff[perm] = aff_seq
    return aff.reshape(h, w)


def holistic_matrix(panoptic: np.ndarray, classes: ClassTable) -> np.ndarray:
    """Full pairwise same-instance matrix, indexed by flat raster position.

    Entry (i, j) is 1 iff pillars i and j hold the same thing instance.
    Test-scale only; refuses grids above HOLISTIC_MAX_PILLARS pillars.
    """
    panoptic = np.asarray(panoptic)
    n = panoptic.size
    if n > HOLISTIC_MAX_PILLARS:
        raise ValueError(f"holistic matrix limited to {HOLISTIC_MAX_PILLARS} "
                         f"pillars, got {n}")
    flat = panoptic.reshape(-1)
    thing = classes.thing_mask()[label_class(flat)] & (flat != 0)
    ids = np.where(thing, flat.astype(np.int64), -np.arange(1, n + 1))
    return (ids[:, None] == ids[None, :]).astype(np.uint8) * thing[:, None] * thing[None, :]


def reduce_holistic(matrix: np.ndarray, order: TraversalOrder) -> np.ndarray:
    """Reduce the pairwise matrix to one bit per pillar: max over the
    pillar's predecessors in traversal order."""
    n = order.h * order.w
    if matrix.shape != (n, n):
        raise ValueError(f"matrix shape {matrix.shape} does not match "
                         f"{order.h}x{order.w} grid")
    perm = order.permutation()
    m = matrix[np.ix_(perm, perm)]
    aff_seq = (np.tril(m, k=-1).max(axis=1) if n else np.empty(0)).astype(np.uint8)
    aff = np.zeros(n, dtype=np.uint8)
    aff[perm] = aff_seq
    return aff.reshape(order.h, order.w)
