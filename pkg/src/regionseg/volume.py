"""In-memory image and label rasters.

Arrays are indexed ``[x, y, z]``; conversion to the X-fastest on-disk order
happens in :mod:`regionseg.nifti_io`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

Vec3 = tuple[float, float, float]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _check_geometry(shape, spacing, origin):
    if len(shape) != 3 or any(int(s) < 1 for s in shape):
        raise ShapeMismatch(f"shape must be 3 positive integers, got {shape}")
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"spacing must be 3 positive reals, got {spacing}")
    if len(origin) != 3 or not all(np.isfinite(o) for o in origin):
        raise ValueError(f"origin must be 3 finite reals, got {origin}")


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar image on a regular grid; voxel values held as float64."""

    voxels: np.ndarray
    spacing: Vec3 = (1.0, 1.0, 1.0)
    origin: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.voxels, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeMismatch(f"Volume needs a 3-D array, got shape {arr.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        _check_geometry(arr.shape, spacing, origin)
        if np.isnan(arr).any():
            raise ValueError("Volume voxels contain NaN")
        object.__setattr__(self, "voxels", _freeze(arr))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def with_voxels(self, voxels, origin=None) -> "Volume":
        return Volume(voxels, self.spacing, self.origin if origin is None else origin)

    def same_as(self, other: "Volume") -> bool:
        return (self.spacing == other.spacing and self.origin == other.origin
                and np.array_equal(self.voxels, other.voxels))


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Integer label raster; 0 is background."""

    labels: np.ndarray
    spacing: Vec3 = (1.0, 1.0, 1.0)
    origin: Vec3 = (0.0, 0.0, 0.0)
    num_classes: int | None = field(default=None)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 3:
            raise ShapeMismatch(f"LabelMap needs a 3-D array, got shape {arr.shape}")
        if arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)) or not np.array_equal(arr, np.round(arr)):
                raise ValueError("LabelMap values must be integers")
        arr = arr.astype(np.int16)
        if arr.size and arr.min() < 0:
            raise ValueError("LabelMap values must be non-negative")
        if self.num_classes is not None and arr.size and arr.max() >= self.num_classes:
            raise ValueError(f"label {arr.max()} outside declared {self.num_classes} classes")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        _check_geometry(arr.shape, spacing, origin)
        object.__setattr__(self, "labels", _freeze(arr))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape

    @property
    def voxels(self) -> np.ndarray:
        # lets geometry helpers treat both kinds uniformly
        return self.labels

    def with_voxels(self, labels, origin=None) -> "LabelMap":
        return LabelMap(labels, self.spacing, self.origin if origin is None else origin,
                        self.num_classes)

    def same_as(self, other: "LabelMap") -> bool:
        return (self.spacing == other.spacing and self.origin == other.origin
                and np.array_equal(self.labels, other.labels))
