"""Box-based geometry on volumes and label maps: crop, paste, pad."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, ShrinkRequested
from .volume import LabelMap, Volume


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned voxel box: inclusive ``start`` and extent ``shape``.

    ``start`` may be negative or reach past the volume; crop fills and paste
    drops whatever lies outside.
    """

    start: tuple[int, int, int]
    shape: tuple[int, int, int]

    def __post_init__(self):
        start = tuple(int(s) for s in self.start)
        shape = tuple(int(s) for s in self.shape)
        if len(start) != 3 or len(shape) != 3:
            raise ShapeMismatch("BoxRegion needs 3-D start and shape")
        if any(s < 1 for s in shape):
            raise ShapeMismatch(f"box shape must be positive, got {shape}")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "shape", shape)

    @property
    def stop(self) -> tuple[int, int, int]:
        return tuple(a + n for a, n in zip(self.start, self.shape))

    def contains(self, other: "BoxRegion") -> bool:
        return all(a <= b and c >= d for a, b, c, d in
                   zip(self.start, other.start, self.stop, other.stop))


def _overlap(start, shape, bounds):
    """Per axis: (src slice in the array, dst slice in the box) of the
    intersection, or None when empty."""
    src, dst = [], []
    for a, n, size in zip(start, shape, bounds):
        lo, hi = max(a, 0), min(a + n, size)
        if lo >= hi:
            return None
        src.append(slice(lo, hi))
        dst.append(slice(lo - a, hi - a))
    return tuple(src), tuple(dst)


def crop_array(arr: np.ndarray, box: BoxRegion, fill=0) -> np.ndarray:
    """Crop the trailing three axes of ``arr``; leading axes pass through."""
    lead = arr.shape[:-3]
    out = np.full(lead + box.shape, fill, dtype=arr.dtype)
    ov = _overlap(box.start, box.shape, arr.shape[-3:])
    if ov is not None:
        src, dst = ov
        out[(Ellipsis,) + dst] = arr[(Ellipsis,) + src]
    return out


def paste_array(dst: np.ndarray, src: np.ndarray, box: BoxRegion) -> np.ndarray:
    if src.shape[-3:] != box.shape:
        raise ShapeMismatch(f"source shape {src.shape[-3:]} != box shape {box.shape}")
    out = dst.copy()
    ov = _overlap(box.start, box.shape, dst.shape[-3:])
    if ov is not None:
        where, inside = ov
        out[(Ellipsis,) + where] = src[(Ellipsis,) + inside]
    return out


def _shifted_origin(v, start):
    return tuple(o + a * s for o, a, s in zip(v.origin, start, v.spacing))


def crop(v: Volume | LabelMap, box: BoxRegion, fill=0) -> Volume | LabelMap:
    """Window ``v`` to ``box``; voxels outside ``v`` read as ``fill``."""
    if isinstance(v, LabelMap) and float(fill) != int(fill):
        raise ValueError("label maps need an integer fill value")
    return v.with_voxels(crop_array(v.voxels, box, fill), origin=_shifted_origin(v, box.start))


def paste(dst: Volume | LabelMap, src: Volume | LabelMap, box: BoxRegion) -> Volume | LabelMap:
    """Overwrite ``dst`` inside ``box`` with ``src``; parts of ``box`` outside
    ``dst`` are dropped."""
    if type(dst) is not type(src):
        raise TypeError(f"cannot paste {type(src).__name__} into {type(dst).__name__}")
    return dst.with_voxels(paste_array(dst.voxels, src.voxels, box))


def placement_for(shape, target_shape) -> BoxRegion:
    """Where ``shape`` sits when centred in ``target_shape`` (floor bias)."""
    if any(t < s for s, t in zip(shape, target_shape)):
        raise ShrinkRequested(f"target {tuple(target_shape)} smaller than {tuple(shape)}")
    return BoxRegion(tuple((t - s) // 2 for s, t in zip(shape, target_shape)), tuple(shape))


def pad_to(v: Volume | LabelMap, target_shape, fill=0) -> tuple[Volume | LabelMap, BoxRegion]:
    """Centre ``v`` inside a ``fill``-valued grid of ``target_shape``.

    Returns the padded raster and the placement box; ``unpad`` with that box
    restores the input exactly.
    """
    place = placement_for(v.shape, target_shape)
    neg = BoxRegion(tuple(-a for a in place.start), tuple(int(t) for t in target_shape))
    return crop(v, neg, fill), place


def unpad(v: Volume | LabelMap, placement: BoxRegion) -> Volume | LabelMap:
    return crop(v, placement)

