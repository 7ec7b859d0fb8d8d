"""Shared domain types: points, grid geometry, packed panoptic labels, class taxonomy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

TAU = 2.0 * math.pi

# Packed panoptic label layout: class_id * OFFSET + instance_index.
# OFFSET 1000 caps instances per class per scene at 999 (index 0 is reserved
# for stuff / ignore), so labels fit comfortably in uint32.
LABEL_OFFSET = 1000
MAX_INSTANCE_INDEX = LABEL_OFFSET - 1


class PillarPanError(Exception):
    """Base class for pipeline errors."""


class LabelCapacityError(PillarPanError):
    """More than 999 instances of one class in a scene."""


class LabelFormatError(PillarPanError):
    """Packed label outside the representable range."""


class FileFormatError(PillarPanError):
    """Malformed container file (bad magic, truncation, count mismatch)."""


class ConfigError(PillarPanError):
    """Invalid configuration document; message carries the offending key path."""


class GenerationError(PillarPanError):
    """Synthetic scene construction failed (e.g. object placement)."""


@dataclass(frozen=True)
class ClassTable:
    """Semantic taxonomy: K classes split into countable things and amorphous stuff.

    Class id 0 is reserved for ignore/noise and belongs to neither set.
    """

    num_classes: int
    thing_ids: tuple[int, ...]
    stuff_ids: tuple[int, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        k = self.num_classes
        things, stuffs = set(self.thing_ids), set(self.stuff_ids)
        if things & stuffs:
            raise ValueError(f"thing/stuff overlap: {sorted(things & stuffs)}")
        if 0 in things or 0 in stuffs:
            raise ValueError("class id 0 is reserved for ignore")
        if things | stuffs != set(range(1, k + 1)):
            raise ValueError(f"thing_ids + stuff_ids must cover 1..{k} exactly")
        if self.names and len(self.names) != k:
            raise ValueError(f"expected {k} names, got {len(self.names)}")

    @property
    def num_things(self) -> int:
        return len(self.thing_ids)

    def is_thing(self, class_id: int) -> bool:
        return class_id in self.thing_ids

    def is_stuff(self, class_id: int) -> bool:
        return class_id in self.stuff_ids

    def name_of(self, class_id: int) -> str:
        if self.names and 1 <= class_id <= self.num_classes:
            return self.names[class_id - 1]
        return f"class_{class_id}"

    def thing_mask(self) -> np.ndarray:
        """Boolean lookup table of size K+1, indexed by class id."""
        m = np.zeros(self.num_classes + 1, dtype=bool)
        m[list(self.thing_ids)] = True
        return m

    def stuff_mask(self) -> np.ndarray:
        m = np.zeros(self.num_classes + 1, dtype=bool)
        m[list(self.stuff_ids)] = True
        return m

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "thing_ids": list(self.thing_ids),
            "stuff_ids": list(self.stuff_ids),
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassTable":
        try:
            return cls(
                num_classes=int(d["num_classes"]),
                thing_ids=tuple(int(x) for x in d["thing_ids"]),
                stuff_ids=tuple(int(x) for x in d["stuff_ids"]),
                names=tuple(str(x) for x in d.get("names", ())),
            )
        except KeyError as e:
            raise ConfigError(f"class table: missing key {e.args[0]!r}") from None


# nuScenes-style 16-class coarse taxonomy; things 1-10, stuff 11-16.
NUSCENES_CLASSES = ClassTable(
    num_classes=16,
    thing_ids=tuple(range(1, 11)),
    stuff_ids=tuple(range(11, 17)),
    names=(
        "barrier",
        "bicycle",
        "bus",
        "car",
        "construction_vehicle",
        "motorcycle",
        "pedestrian",
        "traffic_cone",
        "trailer",
        "truck",
        "drivable_surface",
        "other_flat",
        "sidewalk",
        "terrain",
        "manmade",
        "vegetation",
    ),
)


class PillarIndex(NamedTuple):
    """Grid cell address: row a (first traversal axis), column b (second axis)."""

    a: int
    b: int


@dataclass(frozen=True)
class Point:
    """One lidar return: position in meters, reflectance, relative capture time."""

    x: float
    y: float
    z: float
    intensity: float = 0.0
    timestamp: float = 0.0

    @property
    def r(self) -> float:
        return math.hypot(self.x, self.y)

    @property
    def theta(self) -> float:
        t = math.atan2(self.y, self.x)
        if t < 0.0:
            t += TAU
        if t >= TAU:
            t = 0.0
        return t


def xy_to_polar(x, y):
    """Vectorized (x, y) -> (r, theta) with theta canonicalized to [0, 2pi)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    theta = np.where(theta < 0.0, theta + TAU, theta)
    # atan2 of a tiny negative y can land exactly on 2pi after the shift
    theta = np.where(theta >= TAU, 0.0, theta)
    return r, theta


def polar_to_xy(r, theta):
    r = np.asarray(r, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    return r * np.cos(theta), r * np.sin(theta)


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a BEV pillar grid.

    The first traversal axis is a (H bins), the second is b (W bins).
    Cartesian grids map (a, b) = (y, x); polar grids map (a, b) = (r, theta)
    with theta periodic over [0, 2pi).
    """

    mode: str
    a_min: float
    a_max: float
    b_min: float
    b_max: float
    z_min: float
    z_max: float
    h: int
    w: int
    classes: ClassTable = field(default=NUSCENES_CLASSES)

    def __post_init__(self):
        if self.mode not in ("cartesian", "polar"):
            raise ValueError(f"unknown grid mode {self.mode!r}")
        if self.h <= 0 or self.w <= 0:
            raise ValueError("grid must have positive pillar counts")
        if not (self.a_max > self.a_min and self.b_max > self.b_min):
            raise ValueError("grid bounds must be non-degenerate")
        if self.mode == "polar":
            if self.b_min != 0.0 or abs(self.b_max - TAU) > 1e-12:
                raise ValueError("polar grids require b in [0, 2pi)")

    @property
    def cell_a(self) -> float:
        return (self.a_max - self.a_min) / self.h

    @property
    def cell_b(self) -> float:
        return (self.b_max - self.b_min) / self.w

    @property
    def num_pillars(self) -> int:
        return self.h * self.w

    @classmethod
    def cartesian(cls, x_min, x_max, y_min, y_max, h, w,
                  z_min=-5.0, z_max=3.0, classes=NUSCENES_CLASSES) -> "GridSpec":
        # a axis is y, b axis is x
        return cls("cartesian", y_min, y_max, x_min, x_max, z_min, z_max, h, w, classes)

    @classmethod
    def polar(cls, r_min, r_max, h, w,
              z_min=-5.0, z_max=3.0, classes=NUSCENES_CLASSES) -> "GridSpec":
        return cls("polar", r_min, r_max, 0.0, TAU, z_min, z_max, h, w, classes)

    @classmethod
    def default_polar(cls, classes=NUSCENES_CLASSES) -> "GridSpec":
        """512x512 polar grid over r in [0.3, 50.3] m, z in [-5, 3] m."""
        return cls.polar(0.3, 50.3, 512, 512, classes=classes)

    @classmethod
    def default_cartesian(cls, classes=NUSCENES_CLASSES) -> "GridSpec":
        """512x512 cartesian grid over +-51.2 m (0.2 m pillars), z in [-5, 3] m."""
        return cls.cartesian(-51.2, 51.2, -51.2, 51.2, 512, 512, classes=classes)

    def grid_coords(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-point (a, b) coordinates in grid units (meters / radians)."""
        x, y = points[:, 0], points[:, 1]
        if self.mode == "cartesian":
            return np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64)
        return xy_to_polar(x, y)


def pack_label(class_id: int, instance_index: int, classes: ClassTable | None = None) -> int:
    """Pack (class, instance) into a single panoptic label.

    Stuff and ignore classes must use instance_index 0.  Passing a class
    table additionally enforces the stuff rule; without one only the ranges
    are checked.
    """
    if class_id < 0:
        raise LabelFormatError(f"negative class id {class_id}")
    if instance_index < 0:
        raise LabelFormatError(f"negative instance index {instance_index}")
    if instance_index > MAX_INSTANCE_INDEX:
        raise LabelCapacityError(
            f"instance index {instance_index} exceeds {MAX_INSTANCE_INDEX} "
            f"(more than {MAX_INSTANCE_INDEX} instances of class {class_id})"
        )
    if classes is not None:
        if class_id > classes.num_classes:
            raise LabelFormatError(
                f"class id {class_id} exceeds K={classes.num_classes}")
        if not classes.is_thing(class_id) and instance_index != 0:
            raise LabelFormatError(
                f"class {class_id} is stuff/ignore but instance index is {instance_index}")
    return class_id * LABEL_OFFSET + instance_index


def unpack_label(packed: int, num_classes: int = NUSCENES_CLASSES.num_classes) -> tuple[int, int]:
    """Inverse of pack_label: packed -> (class_id, instance_index)."""
    if packed < 0 or packed >= (num_classes + 1) * LABEL_OFFSET:
        raise LabelFormatError(
            f"packed label {packed} outside [0, {(num_classes + 1) * LABEL_OFFSET})")
    return packed // LABEL_OFFSET, packed % LABEL_OFFSET


def label_class(packed):
    """Vectorized class part of packed labels."""
    return np.asarray(packed) // LABEL_OFFSET


def label_instance(packed):
    """Vectorized instance part of packed labels."""
    return np.asarray(packed) % LABEL_OFFSET
