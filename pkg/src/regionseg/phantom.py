"""Synthetic brain phantoms: 12 ellipsoidal structures inside a layered
brain ellipsoid, with Gaussian noise, a smooth multiplicative bias field and
a per-subject intensity gain.

The default layout is sized for 64^3 volumes and the desk region boxes in
``data/regions_desk.json``. Brainstem and striatum structures draw from the
same set of intensities, so only position separates them in a whole-volume
view; inside one region box every structure is intensity-distinct.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import BadConfig, StructureOutsideRegion
from .regions import PALETTE, RegionSpec, load_regions
from .volume import LabelMap, Volume


@dataclass(frozen=True)
class StructureSpec:
    label: int
    center: tuple[float, float, float]      # fraction of shape per axis
    semi_axes: tuple[float, float, float]   # voxels
    intensity: float
    noise_sigma: float = 20.0


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int]
    structures: tuple[StructureSpec, ...]
    tissue: tuple[float, float, float] = (250.0, 700.0, 1000.0)  # CSF, GM, WM
    brain_semi_axes: tuple[float, float, float] = (29.0, 30.5, 29.5)
    csf_thickness: float = 1.5
    gm_thickness: float = 3.0
    tissue_noise_sigma: float = 20.0
    bias_amplitude: float = 0.0
    gain_range: tuple[float, float] = (1.0, 1.0)
    center_jitter: float = 0.0     # voxels, uniform +-
    axis_jitter: float = 0.0       # relative, uniform +-
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        try:
            d = dict(d)
            d["structures"] = tuple(StructureSpec(**{k: tuple(v) if isinstance(v, list) else v
                                                     for k, v in s.items()})
                                    for s in d["structures"])
            for k in ("shape", "tissue", "brain_semi_axes", "gain_range", "spacing"):
                if k in d:
                    d[k] = tuple(d[k])
            return cls(**d)
        except (KeyError, TypeError) as exc:
            raise BadConfig(f"bad phantom spec: {exc}") from exc


# desk layout in voxel coordinates of a 64^3 grid: label -> (center, semi-axes, intensity)
_DESK_LAYOUT = {
    # brainstem box x[20,44) y[20,44) z[2,26)
    1: ((32.0, 30.0, 20.5), (5.0, 4.5, 3.0), 600.0),     # midbrain
    2: ((32.0, 31.0, 13.0), (6.0, 5.0, 3.5), 850.0),     # pons
    3: ((32.0, 30.0, 7.0), (3.5, 3.5, 2.5), 500.0),      # medulla
    4: ((32.0, 23.5, 14.0), (4.0, 2.0, 3.0), 400.0),     # scp
    # ventricles box x[16,48) y[12,52) z[26,58)
    5: ((25.0, 30.0, 42.0), (3.0, 12.0, 4.0), 100.0),    # left lateral
    6: ((39.0, 30.0, 42.0), (3.0, 12.0, 4.0), 200.0),    # right lateral
    7: ((32.0, 28.0, 34.0), (2.0, 7.0, 4.0), 300.0),     # third
    8: ((32.0, 17.0, 30.0), (3.0, 2.5, 2.5), 400.0),     # fourth
    # striatum box x[20,44) y[38,62) z[32,56)
    9: ((27.0, 48.0, 46.0), (3.0, 4.5, 4.0), 600.0),     # left caudate
    10: ((37.0, 48.0, 46.0), (3.0, 4.5, 4.0), 500.0),    # right caudate
    11: ((25.0, 54.0, 38.0), (2.5, 4.0, 3.0), 400.0),    # left putamen
    12: ((39.0, 54.0, 38.0), (2.5, 4.0, 3.0), 850.0),    # right putamen
}
_DESK_SHAPE = (64, 64, 64)


def desk_spec(seed: int = 0, jitter: bool = True, noise_sigma: float = 20.0,
              bias_amplitude: float = 0.03, gain_range=(0.7, 1.3)) -> PhantomSpec:
    """Default 64^3 phantom matching the bundled desk region boxes."""
    structures = tuple(
        StructureSpec(label, tuple(c / n for c, n in zip(center, _DESK_SHAPE)), axes,
                      intensity, noise_sigma)
        for label, (center, axes, intensity) in sorted(_DESK_LAYOUT.items()))
    return PhantomSpec(
        shape=_DESK_SHAPE,
        structures=structures,
        tissue_noise_sigma=noise_sigma,
        bias_amplitude=bias_amplitude,
        gain_range=tuple(gain_range),
        center_jitter=1.0 if jitter else 0.0,
        axis_jitter=0.1 if jitter else 0.0,
        seed=seed,
    )


def _grid(shape):
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")


def ellipsoid_mask(shape, center, semi_axes) -> np.ndarray:
    """Voxels whose centres satisfy sum(((p - c) / a)^2) <= 1."""
    g = _grid(shape)
    r = sum(((gi - c) / a) ** 2 for gi, c, a in zip(g, center, semi_axes))
    return r <= 1.0


def _bias_field(shape, amplitude, rng) -> np.ndarray:
    if amplitude == 0:
        return np.ones(shape)
    u, v, w = (2.0 * gi / max(n - 1, 1) - 1.0 for gi, n in zip(_grid(shape), shape))
    coef = rng.uniform(-1.0, 1.0, size=6)
    poly = (coef[0] * u + coef[1] * v + coef[2] * w
            + coef[3] * u * v + coef[4] * v * w + coef[5] * (u * u - w * w))
    peak = np.abs(poly).max()
    if peak > 0:
        poly = poly / peak
    return 1.0 + amplitude * poly


def check_containment(labels: np.ndarray, regions, margin: int = 1) -> None:
    """Every structure must sit strictly inside its region's box, at least
    ``margin`` voxels from each face."""
    for spec in regions:
        lo = np.array(spec.box.start) + margin
        hi = np.array(spec.box.stop) - 1 - margin
        for g in spec.global_labels:
            pts = np.argwhere(labels == g)
            if pts.size == 0:
                continue
            if (pts.min(axis=0) < lo).any() or (pts.max(axis=0) > hi).any():
                raise StructureOutsideRegion(
                    f"{PALETTE[g]} spans {pts.min(axis=0).tolist()}..{pts.max(axis=0).tolist()}, "
                    f"outside the {spec.name} box interior {lo.tolist()}..{hi.tolist()}")


def generate(spec: PhantomSpec, regions: list[RegionSpec] | None = None,
             require_all: bool = True) -> tuple[Volume, LabelMap]:
    """Render ``spec`` to an intensity volume and its 12-structure label map.

    Later structures overwrite earlier ones where ellipsoids overlap.
    ``regions`` (default: the bundled desk layout when the shape is 64^3)
    is used for the containment check; pass an empty list to skip it.
    """
    rng = np.random.default_rng(spec.seed)
    shape = tuple(spec.shape)
    centre = tuple((n - 1) / 2.0 for n in shape)

    brain = ellipsoid_mask(shape, centre, spec.brain_semi_axes)
    inner_gm = ellipsoid_mask(shape, centre, tuple(a - spec.csf_thickness for a in spec.brain_semi_axes))
    inner_wm = ellipsoid_mask(shape, centre, tuple(a - spec.csf_thickness - spec.gm_thickness
                                                   for a in spec.brain_semi_axes))
    csf, gm, wm = spec.tissue
    mean = np.zeros(shape)
    mean[brain] = csf
    mean[inner_gm] = gm
    mean[inner_wm] = wm
    sigma = np.where(brain, spec.tissue_noise_sigma, 0.0)

    labels = np.zeros(shape, dtype=np.int16)
    for s in spec.structures:
        c = np.array(s.center) * np.array(shape)
        a = np.array(s.semi_axes, dtype=np.float64)
        if spec.center_jitter:
            c = c + rng.uniform(-spec.center_jitter, spec.center_jitter, size=3)
        if spec.axis_jitter:
            a = a * (1.0 + rng.uniform(-spec.axis_jitter, spec.axis_jitter, size=3))
        m = ellipsoid_mask(shape, c, a)
        labels[m] = s.label
        mean[m] = s.intensity
        sigma[m] = s.noise_sigma

    present = set(np.unique(labels[labels > 0]).tolist())
    if require_all and present != set(PALETTE):
        missing = sorted(set(PALETTE) - present)
        raise StructureOutsideRegion(f"structures missing from the rendered phantom: {missing}")
    if regions is None and shape == _DESK_SHAPE:
        regions = load_regions()
    if regions:
        check_containment(labels, regions)

    bias = _bias_field(shape, spec.bias_amplitude, rng)
    gain = rng.uniform(*spec.gain_range) if spec.gain_range[0] != spec.gain_range[1] else spec.gain_range[0]
    noise = rng.standard_normal(shape) * sigma
    img = np.where(brain | (labels > 0), (mean + noise) * bias * gain, 0.0)
    # background outside the brain is exactly zero (skull stripped)
    return Volume(img, spec.spacing), LabelMap(labels, spec.spacing, num_classes=len(PALETTE) + 1)


def dataset(n: int, seed: int = 0, **kwargs) -> list[tuple[Volume, LabelMap]]:
    """``n`` jittered desk phantoms with seeds ``seed, seed+1, ...``."""
    return [generate(desk_spec(seed=seed + i, **kwargs)) for i in range(n)]


def load_spec(path) -> PhantomSpec:
    return PhantomSpec.from_dict(json.loads(Path(path).read_text()))


def save_spec(spec: PhantomSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2))


__all__ = ["PhantomSpec", "StructureSpec", "check_containment", "dataset", "desk_spec",
           "ellipsoid_mask", "generate", "load_spec", "save_spec"]
