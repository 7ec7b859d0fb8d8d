"""Instance-id propagation from semantic + affinity rasters.

The production path is a column-windowed local clusterer: walking the grid in
traversal order, affinity-0 thing pillars open a fresh instance and
affinity-1 pillars join the nearest same-class instance stored in a memory of
the last k traversal columns.  Two global single-pass baselines (plain and
iterative-centroid) are provided for ablation.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import (TAU, GridSpec, LABEL_OFFSET, LabelCapacityError,
                   MAX_INSTANCE_INDEX, PillarIndex)

DEFAULT_K = 15
DEFAULT_MAX_ITERS = 10


@dataclass(frozen=True)
class ClusteringParams:
    """Knobs of the propagation stage.

    ``k`` is the column window size; ``theta_wrap`` enables periodic distance
    on the b axis and defaults to the grid mode (wrap for polar).
    """

    k: int = DEFAULT_K
    theta_wrap: bool | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("window size k must be >= 1")

    def wrap_for(self, spec: GridSpec) -> bool:
        if self.theta_wrap is None:
            return spec.mode == "polar"
        return self.theta_wrap


@dataclass
class PropagationStats:
    """Bookkeeping from one propagation run."""

    seeds: int = 0
    fallbacks: int = 0


def pillar_distance(p: PillarIndex, q: PillarIndex, spec: GridSpec,
                    params: ClusteringParams = ClusteringParams()) -> int:
    """Manhattan distance in pillar units; the b axis wraps on polar grids."""
    for idx in (p, q):
        if not (0 <= idx[0] < spec.h and 0 <= idx[1] < spec.w):
            raise IndexError(f"pillar {tuple(idx)} outside {spec.h}x{spec.w} grid")
    da = abs(p[0] - q[0])
    db = abs(p[1] - q[1])
    if params.wrap_for(spec):
        db = min(db, spec.w - db)
    return da + db


class ColumnMemory:
    """Sliding window over the last k traversal columns of stored pillars.

    Every visited thing pillar is stored as (instance id, class, a, b).
    While column a is being processed the window holds columns [a-k, a];
    finishing a column evicts anything older.
    """

    def __init__(self, k: int, w: int, wrap: bool):
        self.k = k
        self.w = w
        self.wrap = wrap
        self._columns: deque[tuple[int, list[tuple[int, int, int, int]]]] = deque()

    def store(self, instance_id: int, class_id: int, a: int, b: int) -> None:
        if not self._columns or self._columns[-1][0] != a:
            self._columns.append((a, []))
        self._columns[-1][1].append((instance_id, class_id, a, b))

    def finish_column(self) -> None:
        while len(self._columns) > self.k:
            self._columns.popleft()

    def nearest(self, class_id: int, a: int, b: int) -> int | None:
        """Instance id of the closest stored same-class pillar, or None.

        Ties go to the earliest stored entry (smallest traversal index).
        """
        best_id, best_d = None, None
        for _, entries in self._columns:
            for iid, cls, ea, eb in entries:
                if cls != class_id:
                    continue
                db = abs(b - eb)
                if self.wrap:
                    db = min(db, self.w - db)
                d = abs(a - ea) + db
                if best_d is None or d < best_d:
                    best_id, best_d = iid, d
        return best_id

    def __len__(self) -> int:
        return sum(len(entries) for _, entries in self._columns)


def _validate_rasters(sem: np.ndarray, aff: np.ndarray, spec: GridSpec) -> None:
    shape = (spec.h, spec.w)
    if sem.shape != shape or aff.shape != shape:
        raise ValueError(f"raster shapes {sem.shape}/{aff.shape} do not match "
                         f"grid {shape}")
    if sem.size:
        if int(sem.min()) < 0 or int(sem.max()) > spec.classes.num_classes:
            raise ValueError(f"semantic classes outside [0, {spec.classes.num_classes}]")
        if int(aff.max(initial=0)) > 1:
            raise ValueError("affinity raster must be binary")


def propagate_local(sem: np.ndarray, aff: np.ndarray, spec: GridSpec,
                    params: ClusteringParams = ClusteringParams(),
                    return_stats: bool = False):
    """Column-windowed instance-id propagation (the production clusterer).

    Stuff pillars get class*1000.  Thing pillars with affinity 0 open a new
    instance; with affinity 1 they take the id of the nearest same-class
    pillar in the memory window (falling back to a new instance when the
    window holds no same-class entry).  Raises LabelCapacityError past 999
    instances of one class.
    """
    sem = np.ascontiguousarray(sem, dtype=np.int32)
    aff = np.ascontiguousarray(aff, dtype=np.uint8)
    _validate_rasters(sem, aff, spec)

    from ._local_kernel import propagate_kernel

    out, overflow, seeds, fallbacks = propagate_kernel(
        sem, aff, spec.classes.thing_mask(), params.k, params.wrap_for(spec))
    if overflow >= 0:
        raise LabelCapacityError(
            f"more than {MAX_INSTANCE_INDEX} instances of class {overflow}")
    if return_stats:
        return out, PropagationStats(seeds=int(seeds), fallbacks=int(fallbacks))
    return out


def propagate_local_reference(sem: np.ndarray, aff: np.ndarray, spec: GridSpec,
                              params: ClusteringParams = ClusteringParams(),
                              return_stats: bool = False):
    """Straightforward ColumnMemory implementation of propagate_local.

    Kept as the readable statement of the algorithm; the jitted kernel must
    agree with it exactly (covered by tests).
    """
    sem = np.asarray(sem)
    aff = np.asarray(aff)
    _validate_rasters(sem, aff, spec)
    thing = spec.classes.thing_mask()
    wrap = params.wrap_for(spec)

    out = np.zeros((spec.h, spec.w), dtype=np.uint32)
    counters = [0] * (spec.classes.num_classes + 1)
    memory = ColumnMemory(params.k, spec.w, wrap)
    stats = PropagationStats()

    for a in range(spec.h):
        for b in range(spec.w):
            s = int(sem[a, b])
            if s == 0:
                continue
            if not thing[s]:
                out[a, b] = s * LABEL_OFFSET
                continue
            iid = None
            if aff[a, b]:
                iid = memory.nearest(s, a, b)
                if iid is None:
                    stats.fallbacks += 1
            else:
                stats.seeds += 1
            if iid is None:
                counters[s] += 1
                if counters[s] > MAX_INSTANCE_INDEX:
                    raise LabelCapacityError(
                        f"more than {MAX_INSTANCE_INDEX} instances of class {s}")
                iid = s * LABEL_OFFSET + counters[s]
            out[a, b] = iid
            memory.store(iid, s, a, b)
        memory.finish_column()
    if return_stats:
        return out, stats
    return out


def _wrapped_abs(db: np.ndarray, w: int, wrap: bool) -> np.ndarray:
    db = np.abs(db)
    if wrap:
        db = np.minimum(db, w - db)
    return db


def propagate_global(sem: np.ndarray, aff: np.ndarray, spec: GridSpec,
                     params: ClusteringParams = ClusteringParams()) -> np.ndarray:
    """Single-pass global baseline: every affinity-0 thing pillar is a seed
    and every affinity-1 thing pillar joins the nearest same-class seed
    anywhere on the grid."""
    out, _, _ = _global_assign(sem, aff, spec, params)
    return out


def propagate_global_iterative(sem: np.ndarray, aff: np.ndarray, spec: GridSpec,
                               params: ClusteringParams = ClusteringParams(),
                               max_iters: int = DEFAULT_MAX_ITERS) -> np.ndarray:
    """Global baseline with centroid updates.

    After the single pass, each cluster's center is recomputed as the mean of
    its member pillar coordinates (circular mean on b when wrapping) and
    every affinity-1 pillar is reassigned to the nearest same-class center,
    until assignments are stable or max_iters sweeps have run.  Seed pillars
    never move; a seedless (fallback) cluster dies once it loses its members.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    sem = np.asarray(sem)
    out, clusters, wrap = _global_assign(sem, aff, sspec := spec, params)
    if not clusters:
        return out

    w = spec.w
    ids = np.array([iid for iid, _, _ in clusters], dtype=np.uint32)
    cls = np.array([c for _, c, _ in clusters], dtype=np.int64)
    anchor_a, anchor_b, anchor_cluster = [], [], []
    for ci, (_, _, anchors) in enumerate(clusters):
        for sa, sb in anchors:
            anchor_a.append(sa)
            anchor_b.append(sb)
            anchor_cluster.append(ci)
    anchor_a = np.asarray(anchor_a, dtype=np.float64)
    anchor_b = np.asarray(anchor_b, dtype=np.float64)
    anchor_cluster = np.asarray(anchor_cluster, dtype=np.int64)

    thing_mask = spec.classes.thing_mask()[sem] & (sem != 0)
    qa, qb = np.nonzero(thing_mask & (np.asarray(aff) != 0))
    if not len(qa):
        return out
    qcls = sem[qa, qb]
    id_to_cluster = {int(i): ci for ci, i in enumerate(ids)}
    assign = np.array([id_to_cluster[int(out[a, b])] for a, b in zip(qa, qb)],
                      dtype=np.int64)

    for _ in range(max_iters):
        ca = np.zeros(len(clusters))
        cb = np.zeros(len(clusters))
        alive = np.zeros(len(clusters), dtype=bool)
        for ci in range(len(clusters)):
            mem_a = np.concatenate([anchor_a[anchor_cluster == ci], qa[assign == ci]])
            mem_b = np.concatenate([anchor_b[anchor_cluster == ci], qb[assign == ci]])
            if not len(mem_a):
                continue
            alive[ci] = True
            ca[ci] = mem_a.mean()
            cb[ci] = _mean_b(mem_b, w, wrap)

        new_assign = assign.copy()
        for c in np.unique(qcls):
            cand = np.flatnonzero((cls == c) & alive)
            q = np.flatnonzero(qcls == c)
            if not len(cand) or not len(q):
                continue
            da = np.abs(qa[q][:, None] - ca[cand][None, :])
            db = _wrapped_abs(qb[q][:, None] - cb[cand][None, :], w, wrap)
            new_assign[q] = cand[np.argmin(da + db, axis=1)]
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

    out = out.copy()
    out[qa, qb] = ids[assign]
    return out


def _mean_b(b: np.ndarray, w: int, wrap: bool) -> float:
    if not wrap:
        return float(b.mean())
    ang = b * (TAU / w)
    s, c = np.sin(ang).sum(), np.cos(ang).sum()
    if math.hypot(s, c) < 1e-12:
        return float(b.mean())  # balanced antipodal members: fall back to plain mean
    m = math.atan2(s, c) % TAU
    return m * w / TAU


def _global_assign(sem, aff, spec, params):
    """Shared single pass.  Returns (raster, clusters, wrap) where each
    cluster is (instance id, class, anchor pillars); fallback clusters carry
    no anchors and survive only through assigned members."""
    sem = np.asarray(sem)
    aff = np.asarray(aff)
    _validate_rasters(sem, aff, spec)
    thing = spec.classes.thing_mask()
    wrap = params.wrap_for(spec)
    k_classes = spec.classes.num_classes

    out = np.zeros((spec.h, spec.w), dtype=np.uint32)
    stuff_mask = spec.classes.stuff_mask()[sem] & (sem != 0)
    out[stuff_mask] = (sem[stuff_mask] * LABEL_OFFSET).astype(np.uint32)

    thing_mask = thing[sem] & (sem != 0)
    counters = np.zeros(k_classes + 1, dtype=np.int64)
    clusters: list[tuple[int, int, list[tuple[int, int]]]] = []

    seed_mask = thing_mask & (aff == 0)
    query_mask = thing_mask & (aff != 0)

    for c in range(1, k_classes + 1):
        if not thing[c]:
            continue
        sa, sb = np.nonzero(seed_mask & (sem == c))
        qa, qb = np.nonzero(query_mask & (sem == c))
        seed_ids = np.empty(len(sa), dtype=np.uint32)
        for i in range(len(sa)):
            counters[c] += 1
            _check_capacity(counters[c], c)
            iid = c * LABEL_OFFSET + counters[c]
            seed_ids[i] = iid
            clusters.append((iid, c, [(int(sa[i]), int(sb[i]))]))
        if len(sa):
            out[sa, sb] = seed_ids
        if not len(qa):
            continue
        if len(sa):
            da = np.abs(qa[:, None] - sa[None, :])
            db = _wrapped_abs(qb[:, None] - sb[None, :], spec.w, wrap)
            nearest = np.argmin(da + db, axis=1)
            out[qa, qb] = seed_ids[nearest]
        else:
            # no same-class seed anywhere: each query opens its own instance
            for a, b in zip(qa, qb):
                counters[c] += 1
                _check_capacity(counters[c], c)
                iid = c * LABEL_OFFSET + counters[c]
                out[a, b] = iid
                clusters.append((iid, c, []))
    return out, clusters, wrap


def _check_capacity(count: int, class_id: int) -> None:
    if count > MAX_INSTANCE_INDEX:
        raise LabelCapacityError(
            f"more than {MAX_INSTANCE_INDEX} instances of class {class_id}")
