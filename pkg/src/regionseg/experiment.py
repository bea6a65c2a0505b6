"""Matched region-based vs patch-based phantom experiment.

Generates jittered phantoms, FCM-normalizes them, trains the three region
models and one whole-volume patch model on the same subjects with the same
schedule, then scores both on held-out phantoms.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics, phantom
from .errors import AllZeroDifferences
from .preprocess import normalize_wm
from .regions import FULL_SCALE_BOX_SHAPES, NUM_GLOBAL_CLASSES, PALETTE, REGION_NAMES, RegionSpec, load_regions
from .tiling import PatchPlan, plan_patches
from .train import (
    TrainHistory,
    TrainSchedule,
    patch_dataset,
    predict_full_patch_based,
    predict_full_region_based,
    region_dataset,
    train_region,
)
from .unet import UNetConfig, UNetModel, build

logger = logging.getLogger(__name__)

# full-scale geometry: 240^3 head, 80^3 patches at stride 40, three region boxes
FULL_SHAPE = (240, 240, 240)
FULL_PATCH = (80, 80, 80)
FULL_STRIDE = (40, 40, 40)
FULL_BOXES = tuple(FULL_SCALE_BOX_SHAPES[n] for n in REGION_NAMES)


@dataclass(frozen=True)
class ExperimentConfig:
    n_train: int = 20
    n_test: int = 5
    seed: int = 0
    resolution_steps: int = 3
    channels: tuple[int, ...] = (8, 16, 32)
    schedule: TrainSchedule = field(default_factory=lambda: TrainSchedule(6, 8, 1, 0.01, 0.9, 0))
    patch_shape: tuple[int, int, int] = (32, 32, 32)
    patch_stride: tuple[int, int, int] = (16, 16, 16)
    workers: int = 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "schedule" in d:
            d["schedule"] = TrainSchedule.from_dict(d["schedule"])
        for k in ("channels", "patch_shape", "patch_stride"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def voxels_per_epoch_region(box_shapes, n_subjects: int = 1) -> int:
    return n_subjects * sum(int(np.prod(s)) for s in box_shapes)


def voxels_per_epoch_patch(plan: PatchPlan, n_subjects: int = 1) -> int:
    return n_subjects * plan.voxels_processed()


def full_scale_inflation() -> float:
    """Patch voxels (every 80^3 patch of a 240^3 grid, stride 40) over the
    summed region-box voxels, per subject."""
    plan = plan_patches(FULL_SHAPE, FULL_PATCH, FULL_STRIDE)
    return voxels_per_epoch_patch(plan) / voxels_per_epoch_region(FULL_BOXES)


def make_phantoms(n: int, seed: int):
    """``n`` normalized (Volume, LabelMap) phantom pairs with seeds seed..seed+n-1."""
    out = []
    for s in range(seed, seed + n):
        v, lab = phantom.generate(phantom.desk_spec(seed=s))
        out.append((normalize_wm(v), lab))
    return out


@dataclass
class ExperimentResult:
    region_histories: dict[str, TrainHistory]
    patch_history: TrainHistory
    region_train_seconds: float
    patch_train_seconds: float
    region_records: list[metrics.EvalRecord]
    patch_records: list[metrics.EvalRecord]
    region_voxels_per_epoch: int
    patch_voxels_per_epoch: int
    region_models: dict[str, UNetModel]
    patch_model: UNetModel
    wilcoxon: tuple[float, float] | None = None

    @staticmethod
    def _mean(records) -> float:
        return float(np.mean([d for r in records for d in r.dsc.values()]))

    @property
    def region_mean_dsc(self) -> float:
        return self._mean(self.region_records)

    @property
    def patch_mean_dsc(self) -> float:
        return self._mean(self.patch_records)

    @property
    def time_ratio(self) -> float:
        return self.patch_train_seconds / self.region_train_seconds

    @property
    def voxel_ratio(self) -> float:
        return self.patch_voxels_per_epoch / self.region_voxels_per_epoch

    def report_rows(self) -> list[tuple[str, str, str]]:
        epochs = len(self.patch_history.records)
        return [
            ("quantity", "region-based", "patch-based"),
            ("train seconds", f"{self.region_train_seconds:.1f}", f"{self.patch_train_seconds:.1f}"),
            ("seconds per epoch", f"{self.region_train_seconds / epochs:.2f}",
             f"{self.patch_train_seconds / epochs:.2f}"),
            ("voxels per epoch", str(self.region_voxels_per_epoch), str(self.patch_voxels_per_epoch)),
            ("mean test DSC", f"{self.region_mean_dsc:.4f}", f"{self.patch_mean_dsc:.4f}"),
        ]

    def report(self) -> str:
        rows = self.report_rows()
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.append(f"time ratio (patch / region): {self.time_ratio:.2f}")
        lines.append(f"voxel ratio (patch / region): {self.voxel_ratio:.2f}")
        lines.append(f"full-scale voxel ratio: {full_scale_inflation():.2f}")
        if self.wilcoxon is not None:
            lines.append(f"Wilcoxon signed-rank (region vs patch DSC): W={self.wilcoxon[0]:.1f} "
                         f"p={self.wilcoxon[1]:.3g}")
        return "\n".join(lines)


def run(config: ExperimentConfig = ExperimentConfig(), specs: list[RegionSpec] | None = None,
        progress=None) -> ExperimentResult:
    specs = load_regions() if specs is None else specs
    data = make_phantoms(config.n_train + config.n_test, config.seed)
    train_set, test_set = data[:config.n_train], data[config.n_train:]
    sched = config.schedule

    histories, models = {}, {}
    region_seconds = 0.0
    for spec in specs:
        cfg = UNetConfig(config.resolution_steps, config.channels, spec.num_classes, seed=config.seed)
        t0 = time.perf_counter()
        model, hist = train_region(build(cfg), region_dataset(train_set, spec), sched)
        region_seconds += time.perf_counter() - t0
        histories[spec.name], models[spec.name] = hist, model
        if progress:
            progress(f"{spec.name}: {hist.total_seconds:.1f}s, final loss {hist.records[-1].loss:.4f}")

    shape = train_set[0][0].shape
    plan = plan_patches(shape, config.patch_shape, config.patch_stride)
    cfg = UNetConfig(config.resolution_steps, config.channels, NUM_GLOBAL_CLASSES, seed=config.seed)
    t0 = time.perf_counter()
    patch_model, patch_hist = train_region(build(cfg), patch_dataset(train_set, plan), sched)
    patch_seconds = time.perf_counter() - t0
    if progress:
        progress(f"patch: {patch_hist.total_seconds:.1f}s, final loss {patch_hist.records[-1].loss:.4f}")

    region_records, patch_records = [], []
    for i, (v, truth) in enumerate(test_set):
        sid = f"test{i:02d}"
        pr = predict_full_region_based(models, v, specs, config.workers)
        pp = predict_full_patch_based(patch_model, v, plan)
        region_records.append(metrics.evaluate(sid, pr, truth, PALETTE, v.spacing))
        patch_records.append(metrics.evaluate(sid, pp, truth, PALETTE, v.spacing))

    xs = [d for r in region_records for d in r.dsc.values()]
    ys = [d for r in patch_records for d in r.dsc.values()]
    try:
        wil = metrics.wilcoxon_signed_rank(xs, ys)
    except AllZeroDifferences:
        wil = None
    return ExperimentResult(histories, patch_hist, region_seconds, patch_seconds,
                            region_records, patch_records,
                            voxels_per_epoch_region([s.box.shape for s in specs], config.n_train),
                            voxels_per_epoch_patch(plan, config.n_train),
                            models, patch_model, wil)


__all__ = ["ExperimentConfig", "ExperimentResult", "full_scale_inflation", "make_phantoms", "run",
           "voxels_per_epoch_patch", "voxels_per_epoch_region"]
