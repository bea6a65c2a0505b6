"""Overlapping patch grids for the patch-based baseline: plan, extract, stitch."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import PatchLargerThanVolume, PlanMismatch
from .grid import BoxRegion, crop_array, pad_to, placement_for
from .volume import Volume


@dataclass(frozen=True)
class PatchPlan:
    shape: tuple[int, int, int]
    patch_shape: tuple[int, int, int]
    stride: tuple[int, int, int]
    boxes: tuple[BoxRegion, ...]
    padded_shape: tuple[int, int, int]
    placement: BoxRegion

    @property
    def counts(self) -> tuple[int, int, int]:
        return tuple((p - k) // s + 1 for p, k, s in
                     zip(self.padded_shape, self.patch_shape, self.stride))

    def __len__(self) -> int:
        return len(self.boxes)

    def voxels_processed(self) -> int:
        return len(self.boxes) * int(np.prod(self.patch_shape))


def _triple(v) -> tuple[int, int, int]:
    if np.isscalar(v):
        return (int(v),) * 3
    t = tuple(int(a) for a in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {v}")
    return t


def padded_extent(size: int, patch: int, stride: int) -> int:
    """Smallest extent >= size (and >= patch) that a stride-``stride`` grid
    of ``patch``-wide windows covers with no remainder."""
    need = max(size, patch)
    over = (need - patch) % stride
    return need if over == 0 else need + stride - over


def plan_patches(shape, patch_shape, stride) -> PatchPlan:
    shape, patch_shape, stride = _triple(shape), _triple(patch_shape), _triple(stride)
    if any(s < 1 for s in stride) or any(p < 1 for p in patch_shape):
        raise ValueError("patch shape and stride must be positive")
    padded = tuple(padded_extent(n, p, s) for n, p, s in zip(shape, patch_shape, stride))
    if any(p > q for p, q in zip(patch_shape, padded)):  # cannot happen; kept as a guard
        raise PatchLargerThanVolume(f"patch {patch_shape} exceeds padded {padded}")
    starts = [range(0, q - p + 1, s) for q, p, s in zip(padded, patch_shape, stride)]
    # Z slowest, X fastest
    boxes = tuple(BoxRegion((x, y, z), patch_shape)
                  for z, y, x in itertools.product(starts[2], starts[1], starts[0]))
    return PatchPlan(shape, patch_shape, stride, boxes, padded, placement_for(shape, padded))


def _pad_array(arr: np.ndarray, plan: PatchPlan, fill=0) -> np.ndarray:
    place = plan.placement
    neg = BoxRegion(tuple(-a for a in place.start), plan.padded_shape)
    return crop_array(arr, neg, fill)


def _check(arr_shape, plan: PatchPlan):
    if tuple(arr_shape[-3:]) != plan.shape:
        raise PlanMismatch(f"array spatial shape {tuple(arr_shape[-3:])} != planned {plan.shape}")


def iter_patches(arr: np.ndarray, plan: PatchPlan, fill=0):
    """Yield patches of the trailing three axes one at a time, in box order."""
    _check(arr.shape, plan)
    padded = _pad_array(arr, plan, fill)
    for b in plan.boxes:
        yield crop_array(padded, b)


def extract_arrays(arr: np.ndarray, plan: PatchPlan, fill=0) -> list[np.ndarray]:
    """Patches of the trailing three axes (leading axes are carried along)."""
    return list(iter_patches(arr, plan, fill))


def extract(v: Volume, plan: PatchPlan, fill=0.0) -> list[Volume]:
    padded, _ = pad_to(v, plan.padded_shape, fill)
    _check(v.shape, plan)
    return [padded.with_voxels(crop_array(padded.voxels, b),
                               origin=tuple(o + a * s for o, a, s in
                                            zip(padded.origin, b.start, padded.spacing)))
            for b in plan.boxes]


def coverage(plan: PatchPlan) -> np.ndarray:
    """How many boxes cover each padded voxel."""
    cov = np.zeros(plan.padded_shape, dtype=np.int64)
    for b in plan.boxes:
        cov[tuple(slice(a, a + n) for a, n in zip(b.start, b.shape))] += 1
    return cov


def stitch(prob_patches, plan: PatchPlan, num_classes: int) -> np.ndarray:
    """Average overlapping per-class patch probabilities.

    ``prob_patches`` is a sequence or iterator whose i-th item has shape
    (num_classes, *patch_shape) and belongs to ``plan.boxes[i]``; an
    iterator is consumed one patch at a time. Returns (num_classes,
    *plan.shape), un-padded. Accumulation runs in box order, so results are
    reproducible.
    """
    if hasattr(prob_patches, "__len__") and len(prob_patches) != len(plan.boxes):
        raise PlanMismatch(f"{len(prob_patches)} patches for a {len(plan.boxes)}-box plan")
    acc = np.zeros((num_classes,) + plan.padded_shape)
    seen = 0
    for p in prob_patches:
        if seen == len(plan.boxes):
            raise PlanMismatch(f"more patches than the {len(plan.boxes)}-box plan holds")
        b = plan.boxes[seen]
        p = np.asarray(p, dtype=np.float64)
        if p.shape != (num_classes,) + plan.patch_shape:
            raise PlanMismatch(f"patch shape {p.shape} != {(num_classes,) + plan.patch_shape}")
        acc[(slice(None),) + tuple(slice(a, a + n) for a, n in zip(b.start, b.shape))] += p
        seen += 1
    if seen != len(plan.boxes):
        raise PlanMismatch(f"{seen} patches for a {len(plan.boxes)}-box plan")
    acc /= coverage(plan)[None]
    return crop_array(acc, plan.placement)
