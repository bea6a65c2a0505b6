"""The three focal regions: label palette, crop boxes, local/global label
remapping and fusion of per-region predictions."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import BadConfig, ShapeMismatch
from .grid import BoxRegion, crop_array
from .volume import LabelMap

# global id -> name; 0 is background
PALETTE: dict[int, str] = {
    1: "midbrain",
    2: "pons",
    3: "medulla",
    4: "scp",
    5: "left_lateral_ventricle",
    6: "right_lateral_ventricle",
    7: "third_ventricle",
    8: "fourth_ventricle",
    9: "left_caudate",
    10: "right_caudate",
    11: "left_putamen",
    12: "right_putamen",
}
NUM_GLOBAL_CLASSES = len(PALETTE) + 1
REGION_NAMES = ("brainstem", "ventricles", "striatum")
LABELS_PER_REGION = 4

FULL_SCALE_BOX_SHAPES = {
    "brainstem": (96, 96, 96),
    "ventricles": (128, 160, 128),
    "striatum": (96, 96, 96),
}
DESK_BOX_SHAPES = {
    "brainstem": (24, 24, 24),
    "ventricles": (32, 40, 32),
    "striatum": (24, 24, 24),
}
DEFAULT_LABELS = {
    "brainstem": (1, 2, 3, 4),
    "ventricles": (5, 6, 7, 8),
    "striatum": (9, 10, 11, 12),
}


@dataclass(frozen=True)
class RegionSpec:
    name: str
    box: BoxRegion
    global_labels: tuple[int, ...]
    priority: int

    def __post_init__(self):
        labels = tuple(int(g) for g in self.global_labels)
        if self.name not in REGION_NAMES:
            raise BadConfig(f"unknown region {self.name!r}; expected one of {REGION_NAMES}")
        if len(labels) != LABELS_PER_REGION or len(set(labels)) != LABELS_PER_REGION:
            raise BadConfig(f"region {self.name} needs {LABELS_PER_REGION} distinct labels, got {labels}")
        if any(g not in PALETTE for g in labels):
            raise BadConfig(f"region {self.name}: labels {labels} outside the palette")
        object.__setattr__(self, "global_labels", labels)

    @property
    def num_classes(self) -> int:
        return LABELS_PER_REGION + 1

    def local_lut(self) -> np.ndarray:
        """global id -> local id (0 for anything not in this region)."""
        lut = np.zeros(NUM_GLOBAL_CLASSES, dtype=np.int16)
        for local, g in enumerate(self.global_labels, start=1):
            lut[g] = local
        return lut

    def global_lut(self) -> np.ndarray:
        """local id -> global id."""
        return np.array((0,) + self.global_labels, dtype=np.int16)

    def to_dict(self) -> dict:
        return {"name": self.name,
                "box": {"start": list(self.box.start), "shape": list(self.box.shape)},
                "global_labels": list(self.global_labels),
                "priority": self.priority}

    @classmethod
    def from_dict(cls, d: dict) -> "RegionSpec":
        try:
            box = BoxRegion(tuple(d["box"]["start"]), tuple(d["box"]["shape"]))
            return cls(d["name"], box, tuple(d["global_labels"]), int(d["priority"]))
        except (KeyError, TypeError) as exc:
            raise BadConfig(f"malformed region entry {d!r}: {exc}") from exc


def validate_regions(specs) -> None:
    """Three regions, disjoint label sets covering all 12 structures, distinct
    priorities."""
    specs = list(specs)
    if sorted(s.name for s in specs) != sorted(REGION_NAMES):
        raise BadConfig(f"expected regions {REGION_NAMES}, got {[s.name for s in specs]}")
    seen = [g for s in specs for g in s.global_labels]
    if sorted(seen) != sorted(PALETTE):
        raise BadConfig("region label sets must be disjoint and cover all 12 structures")
    if len({s.priority for s in specs}) != len(specs):
        raise BadConfig("region priorities must be distinct")


def load_regions(path=None) -> list[RegionSpec]:
    """Read a region configuration JSON (defaults to the bundled desk layout)."""
    if path is None:
        text = resources.files("regionseg").joinpath("data/regions_desk.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
        specs = [RegionSpec.from_dict(d) for d in doc["regions"]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise BadConfig(f"bad region config {path}: {exc}") from exc
    validate_regions(specs)
    return specs


def save_regions(specs, path) -> None:
    Path(path).write_text(json.dumps({"regions": [s.to_dict() for s in specs]}, indent=2))


def make_regions(starts: dict, shapes: dict = DESK_BOX_SHAPES) -> list[RegionSpec]:
    """Build the three specs from per-region box starts; priorities follow
    REGION_NAMES order (brainstem lowest)."""
    specs = [RegionSpec(n, BoxRegion(tuple(starts[n]), tuple(shapes[n])), DEFAULT_LABELS[n], i + 1)
             for i, n in enumerate(REGION_NAMES)]
    validate_regions(specs)
    return specs


def _labels_of(x) -> np.ndarray:
    return np.asarray(getattr(x, "labels", x))


def remap_to_local(full: LabelMap, spec: RegionSpec) -> LabelMap:
    """Crop ``full`` to the region box and renumber its four structures 1..4;
    every other label becomes background."""
    lab = _labels_of(full)
    if lab.size and (lab.min() < 0 or lab.max() >= NUM_GLOBAL_CLASSES):
        raise ValueError("label map contains ids outside the palette")
    local = spec.local_lut()[crop_array(lab, spec.box, 0)]
    origin = tuple(o + a * s for o, a, s in zip(full.origin, spec.box.start, full.spacing))
    return LabelMap(local, full.spacing, origin, spec.num_classes)


def remap_to_global(local, spec: RegionSpec) -> np.ndarray:
    lab = _labels_of(local)
    if lab.shape != spec.box.shape:
        raise ShapeMismatch(f"{spec.name}: prediction {lab.shape} != box {spec.box.shape}")
    if lab.size and lab.max() > LABELS_PER_REGION:
        raise ValueError(f"{spec.name}: local label {lab.max()} > {LABELS_PER_REGION}")
    return spec.global_lut()[lab]


def fuse_regions(preds, specs, full_shape, spacing=(1.0, 1.0, 1.0),
                 origin=(0.0, 0.0, 0.0)) -> LabelMap:
    """Paste per-region local predictions into one full-size global map.

    Regions are applied in ascending priority and only foreground voxels are
    written, so where two regions claim a voxel the higher priority wins.
    The result does not depend on the order of ``preds``.
    """
    pairs = list(zip(preds, specs))
    if len(pairs) != len(specs) or len(preds) != len(specs):
        raise ShapeMismatch("need one prediction per region spec")
    if len({s.priority for _, s in pairs}) != len(pairs):
        raise BadConfig("region priorities must be distinct")
    out = np.zeros(tuple(full_shape), dtype=np.int16)
    for pred, spec in sorted(pairs, key=lambda ps: ps[1].priority):
        glob = remap_to_global(pred, spec)
        # restrict to the part of the box inside the volume
        src, dst = [], []
        for a, n, size in zip(spec.box.start, spec.box.shape, full_shape):
            lo, hi = max(a, 0), min(a + n, size)
            if lo >= hi:
                break
            dst.append(slice(lo, hi))
            src.append(slice(lo - a, hi - a))
        else:
            g = glob[tuple(src)]
            view = out[tuple(dst)]
            fg = g != 0
            view[fg] = g[fg]
    return LabelMap(out, spacing, origin, NUM_GLOBAL_CLASSES)
