"""Point-to-pillar assignment, majority-vote label encoding, and pillar-to-point decoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import GridSpec, label_class


@dataclass
class Assignment:
    """Point -> pillar mapping for one scene.

    ``a``/``b`` are per-point pillar indices (already clamped into the grid);
    ``clamped`` flags points whose coordinates fell outside the grid bounds
    (including the z slab) before clamping.  Pillar membership is stored in
    CSR form: ``order`` lists point indices grouped by pillar, one group per
    entry of ``pillar_flat``.
    """

    spec: GridSpec
    a: np.ndarray
    b: np.ndarray
    clamped: np.ndarray
    order: np.ndarray = field(repr=False)
    pillar_flat: np.ndarray = field(repr=False)
    pillar_start: np.ndarray = field(repr=False)
    pillar_count: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.a.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.a.astype(np.int64) * self.spec.w + self.b

    def points_in(self, a: int, b: int) -> np.ndarray:
        """Indices of the points assigned to pillar (a, b)."""
        flat = a * self.spec.w + b
        i = np.searchsorted(self.pillar_flat, flat)
        if i == len(self.pillar_flat) or self.pillar_flat[i] != flat:
            return np.empty(0, dtype=np.int64)
        s = self.pillar_start[i]
        return self.order[s:s + self.pillar_count[i]]

    def occupancy(self) -> np.ndarray:
        """H x W point counts."""
        occ = np.zeros(self.spec.num_pillars, dtype=np.int32)
        occ[self.pillar_flat] = self.pillar_count
        return occ.reshape(self.spec.h, self.spec.w)


def pillarize(points: np.ndarray, spec: GridSpec) -> Assignment:
    """Assign each point to a BEV pillar.

    ``points`` is an (N, >=3) array with columns x, y, z[, intensity, timestamp].
    Out-of-range coordinates are clamped to the nearest boundary cell and the
    point is flagged; the polar angle is wrapped, never clamped.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] < 3:
        raise ValueError(f"points must be (N, >=3), got {points.shape}")
    n = points.shape[0]
    if n and not np.isfinite(points[:, :3]).all():
        raise ValueError("points contain NaN or infinite coordinates")

    pa, pb = spec.grid_coords(points) if n else (np.empty(0), np.empty(0))
    ai = np.floor((pa - spec.a_min) / spec.cell_a).astype(np.int64)
    bi = np.floor((pb - spec.b_min) / spec.cell_b).astype(np.int64)

    clamped = (ai < 0) | (ai >= spec.h)
    if spec.mode == "polar":
        # theta is periodic: grid_coords already wrapped it into [0, 2pi),
        # so only float edge cases can push bi to W
        bi = np.where(bi >= spec.w, spec.w - 1, bi)
        bi = np.where(bi < 0, 0, bi)
    else:
        clamped |= (bi < 0) | (bi >= spec.w)
    if n:
        clamped |= (points[:, 2] < spec.z_min) | (points[:, 2] > spec.z_max)

    ai = np.clip(ai, 0, spec.h - 1).astype(np.int32)
    bi = np.clip(bi, 0, spec.w - 1).astype(np.int32)

    flat = ai.astype(np.int64) * spec.w + bi
    order = np.argsort(flat, kind="stable")
    uniq, start, count = np.unique(flat[order], return_index=True, return_counts=True)
    return Assignment(
        spec=spec,
        a=ai,
        b=bi,
        clamped=clamped,
        order=order,
        pillar_flat=uniq,
        pillar_start=start,
        pillar_count=count,
    )


def _majority_per_pillar(asg: Assignment, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Modal value per occupied pillar.

    Zero values (ignore) are excluded from the vote unless the pillar holds
    nothing else; ties break toward the smallest value.  Returns (pillar_flat
    ids, winning values) for occupied pillars only.
    """
    flat = asg.flat
    values = values.astype(np.int64)
    # count (pillar, value) pairs; values are bounded by the packed-label range
    vmax = int(values.max()) + 1 if len(values) else 1
    key = flat * vmax + values
    uk, counts = np.unique(key, return_counts=True)
    pillar = uk // vmax
    val = uk % vmax

    keep = val != 0
    pillar_nz, val_nz, counts_nz = pillar[keep], val[keep], counts[keep]
    # per pillar: max count wins, ties toward the smallest value
    ordering = np.lexsort((val_nz, -counts_nz, pillar_nz))
    winners_pillar, first = np.unique(pillar_nz[ordering], return_index=True)
    winners_val = val_nz[ordering][first]

    # pillars whose points are all zero stay zero
    out = np.zeros(len(asg.pillar_flat), dtype=np.int64)
    idx = np.searchsorted(asg.pillar_flat, winners_pillar)
    out[idx] = winners_val
    return asg.pillar_flat, out


def encode_semantic(labels: np.ndarray, asg: Assignment) -> np.ndarray:
    """H x W class raster by per-pillar majority vote over point class ids."""
    labels = np.asarray(labels)
    _check_labels(labels, asg, asg.spec.classes.num_classes)
    raster = np.zeros(asg.spec.num_pillars, dtype=np.int32)
    if len(labels):
        pf, win = _majority_per_pillar(asg, labels)
        raster[pf] = win
    return raster.reshape(asg.spec.h, asg.spec.w)


def encode_panoptic(labels: np.ndarray, asg: Assignment) -> np.ndarray:
    """H x W packed panoptic raster by per-pillar majority vote over packed labels."""
    labels = np.asarray(labels)
    _check_labels(label_class(labels), asg, asg.spec.classes.num_classes)
    raster = np.zeros(asg.spec.num_pillars, dtype=np.uint32)
    if len(labels):
        pf, win = _majority_per_pillar(asg, labels)
        raster[pf] = win.astype(np.uint32)
    return raster.reshape(asg.spec.h, asg.spec.w)


def decode_to_points(raster: np.ndarray, asg: Assignment) -> np.ndarray:
    """Give every point its pillar's raster value (clamped points included)."""
    raster = np.asarray(raster)
    if raster.shape != (asg.spec.h, asg.spec.w):
        raise ValueError(f"raster shape {raster.shape} does not match grid "
                         f"({asg.spec.h}, {asg.spec.w})")
    return raster.reshape(-1)[asg.flat]


def _check_labels(class_ids: np.ndarray, asg: Assignment, k: int) -> None:
    if len(class_ids) != len(asg):
        raise ValueError(f"{len(class_ids)} labels for {len(asg)} points")
    if len(class_ids) and (int(class_ids.max()) > k or int(class_ids.min()) < 0):
        raise ValueError(f"class ids outside [0, {k}]")


@dataclass
class LabelGrid:
    """Pillar-level rasters for one scene.

    ``semantic`` is derived from the voted panoptic raster so the two never
    disagree on occupied pillars; ``affinity`` starts all-zero and is filled
    by the affinity module.
    """

    spec: GridSpec
    semantic: np.ndarray
    panoptic: np.ndarray
    affinity: np.ndarray
    occupancy: np.ndarray

    @classmethod
    def encode(cls, labels: np.ndarray, asg: Assignment) -> "LabelGrid":
        panoptic = encode_panoptic(labels, asg)
        return cls(
            spec=asg.spec,
            semantic=label_class(panoptic).astype(np.int32),
            panoptic=panoptic,
            affinity=np.zeros((asg.spec.h, asg.spec.w), dtype=np.uint8),
            occupancy=asg.occupancy(),
        )
