"""Two-phase training (weighted cross-entropy, then soft Dice) and full-volume
prediction through the three region models or the patch baseline."""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import metrics
from .errors import BadConfig, EmptyDataset, NonFiniteLoss, ShapeMismatch
from .grid import crop_array
from .losses import class_weights, soft_dice_loss, weighted_cross_entropy
from .optim import MomentumState, sgd_momentum_step
from .regions import NUM_GLOBAL_CLASSES, RegionSpec, fuse_regions, remap_to_local
from .tensor import Tensor, no_grad, softmax_channels
from .tiling import PatchPlan, extract_arrays, iter_patches, stitch
from .unet import UNetModel, checkpoint_bytes, forward, model_from_bytes
from .volume import LabelMap, Volume

logger = logging.getLogger(__name__)


def worker_cap(requested: int) -> int:
    """``requested`` limited by the REGIONSEG_THREADS environment variable."""
    env = os.environ.get("REGIONSEG_THREADS")
    n = max(1, int(requested))
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise BadConfig(f"REGIONSEG_THREADS must be an integer, got {env!r}") from None
    return n


@dataclass(frozen=True)
class TrainSchedule:
    pretrain_epochs: int = 30
    train_epochs: int = 200
    batch_size: int = 4
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    class_weighting: str = "inverse_frequency"
    dice_epsilon: float = 1.0

    def __post_init__(self):
        if self.pretrain_epochs < 1 or self.train_epochs < 1 or self.batch_size < 1:
            raise BadConfig("epoch counts and batch size must be >= 1")
        if not self.lr > 0 or not 0 <= self.momentum < 1:
            raise BadConfig(f"need lr > 0 and 0 <= momentum < 1, got {self.lr}, {self.momentum}")
        if self.class_weighting not in ("inverse_frequency", "uniform"):
            raise BadConfig(f"unknown class weighting {self.class_weighting!r}")

    @property
    def total_epochs(self) -> int:
        return self.pretrain_epochs + self.train_epochs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise BadConfig(f"unknown schedule keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    phase: str          # "pretrain" (cross-entropy) or "train" (Dice)
    loss: float
    seconds: float      # cumulative wall-clock
    val_dsc: float | None = None


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_checkpoint: bytes | None = None
    pretrain_checkpoint: bytes | None = None

    CSV_FIELDS = ("epoch", "phase", "loss", "seconds", "val_dsc")

    @property
    def total_seconds(self) -> float:
        return self.records[-1].seconds if self.records else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.CSV_FIELDS)
            for r in self.records:
                w.writerow([r.epoch, r.phase, repr(r.loss), f"{r.seconds:.3f}",
                            "" if r.val_dsc is None else repr(r.val_dsc)])

    @classmethod
    def read_csv(cls, path) -> "TrainHistory":
        h = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                h.records.append(EpochRecord(int(row["epoch"]), row["phase"], float(row["loss"]),
                                             float(row["seconds"]),
                                             float(row["val_dsc"]) if row["val_dsc"] else None))
        return h


def _stack(dataset):
    """(N, 1, X, Y, Z) images and (N, X, Y, Z) labels from (Volume, LabelMap) pairs."""
    if not dataset:
        raise EmptyDataset("training set is empty")
    shape = dataset[0][0].shape
    for v, l in dataset:
        if v.shape != shape or l.shape != shape:
            raise ShapeMismatch(f"sample shapes differ: {v.shape}/{l.shape} vs {shape}")
    x = np.stack([np.asarray(v.voxels) for v, _ in dataset])[:, None]
    y = np.stack([np.asarray(l.labels, dtype=np.int64) for _, l in dataset])
    return x, y


def predict_probs(model: UNetModel, images: np.ndarray, batch_size: int = 1) -> np.ndarray:
    """Softmax probabilities (N, C, ...) for images shaped (N, 1, ...), in
    inference mode with no graph recorded."""
    out = []
    with no_grad():
        for i in range(0, images.shape[0], batch_size):
            out.append(softmax_channels(forward(model, images[i:i + batch_size], "infer")).data)
    return np.concatenate(out)


def validation_dsc(model: UNetModel, dataset, batch_size: int = 1) -> float:
    x, y = _stack(dataset)
    pred = np.argmax(predict_probs(model, x, batch_size), axis=1)
    fg = range(1, model.config.num_classes)
    return float(np.mean([metrics.mean_foreground_dsc(p, t, fg) for p, t in zip(pred, y)]))


def _batches(n: int, batch_size: int, seed: int, epoch: int):
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_region(model: UNetModel, dataset, schedule: TrainSchedule, validation=None,
                 progress=None) -> tuple[UNetModel, TrainHistory]:
    """Fit ``model`` in place on (Volume, LabelMap) pairs with local labels.

    Cross-entropy (class-weighted from the training labels) runs for
    ``pretrain_epochs``, then soft Dice for ``train_epochs``. Momentum
    buffers are zeroed at the switch. Batches come from a permutation seeded
    by (seed, epoch). With ``validation`` the mean foreground DSC is
    recorded each epoch and the best epoch's checkpoint kept in the history.
    Raises NonFiniteLoss when the loss or any parameter stops being finite.
    """
    x, y = _stack(dataset)
    c = model.config.num_classes
    if y.min() < 0 or y.max() >= c:
        raise BadConfig(f"labels must lie in 0..{c - 1} for a {c}-class model")
    weights = class_weights(y, c, schedule.class_weighting)
    params = model.parameters()
    state = MomentumState.for_params(params, schedule.lr, schedule.momentum)
    history = TrainHistory()
    best = -math.inf
    start = time.perf_counter()

    for epoch in range(schedule.total_epochs):
        phase = "pretrain" if epoch < schedule.pretrain_epochs else "train"
        if epoch == schedule.pretrain_epochs:
            history.pretrain_checkpoint = checkpoint_bytes(model)
            state.reset()
        losses = []
        for idx in _batches(len(x), schedule.batch_size, schedule.seed, epoch):
            logits = forward(model, Tensor(x[idx]), "train")
            if phase == "pretrain":
                loss = weighted_cross_entropy(logits, y[idx], weights)
            else:
                loss = soft_dice_loss(softmax_channels(logits), y[idx], schedule.dice_epsilon)
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(f"{phase} loss became {value} at epoch {epoch + 1}, batch {idx.tolist()}")
            model.zero_grad()
            loss.backward()
            sgd_momentum_step(params, [p.grad for p in params], state)
            if not all(np.isfinite(p.data).all() for p in params):
                raise NonFiniteLoss(f"parameters became non-finite at epoch {epoch + 1}")
            losses.append(value * len(idx))
        rec = EpochRecord(epoch + 1, phase, sum(losses) / len(x), time.perf_counter() - start)
        if validation:
            rec.val_dsc = validation_dsc(model, validation)
            if rec.val_dsc > best:
                best = rec.val_dsc
                history.best_epoch = rec.epoch
                history.best_checkpoint = checkpoint_bytes(model)
        history.records.append(rec)
        logger.info("epoch %d %s loss %.5f%s", rec.epoch, phase, rec.loss,
                    "" if rec.val_dsc is None else f" val_dsc {rec.val_dsc:.4f}")
        if progress is not None:
            progress(rec)
    if history.best_checkpoint is None:
        history.best_epoch = schedule.total_epochs
        history.best_checkpoint = checkpoint_bytes(model)
    return model, history


def region_dataset(pairs, spec: RegionSpec) -> list[tuple[Volume, LabelMap]]:
    """Crop full (Volume, global LabelMap) pairs to one region with local labels."""
    out = []
    for v, lab in pairs:
        img = v.with_voxels(crop_array(np.asarray(v.voxels), spec.box, 0.0))
        out.append((img, remap_to_local(lab, spec)))
    return out


def patch_dataset(pairs, plan: PatchPlan) -> list[tuple[Volume, LabelMap]]:
    """Every patch of every subject, labels kept global."""
    out = []
    for v, lab in pairs:
        imgs = extract_arrays(np.asarray(v.voxels), plan, 0.0)
        labs = extract_arrays(np.asarray(lab.labels), plan, 0)
        out += [(Volume(i, v.spacing), LabelMap(l, v.spacing, num_classes=NUM_GLOBAL_CLASSES))
                for i, l in zip(imgs, labs)]
    return out


def predict_region(model: UNetModel, v: Volume, spec: RegionSpec) -> LabelMap:
    """Crop, infer, argmax (ties go to the lower class id)."""
    if model.config.num_classes != spec.num_classes:
        raise ShapeMismatch(f"{spec.name}: model has {model.config.num_classes} classes, "
                            f"region needs {spec.num_classes}")
    img = crop_array(np.asarray(v.voxels), spec.box, 0.0)
    probs = predict_probs(model, img[None, None])[0]
    return LabelMap(np.argmax(probs, axis=0), v.spacing, num_classes=spec.num_classes)


def predict_full_region_based(models, v: Volume, specs, workers: int = 3,
                              timings: dict | None = None) -> LabelMap:
    """Run the region models concurrently and fuse their outputs.

    ``models`` is aligned with ``specs`` (or a dict keyed by region name).
    Per-region wall-clock seconds go into ``timings`` when given.
    """
    specs = list(specs)
    if isinstance(models, dict):
        models = [models[s.name] for s in specs]
    models = list(models)
    if len(models) != len(specs):
        raise ShapeMismatch(f"{len(models)} models for {len(specs)} regions")

    def job(pair):
        t0 = time.perf_counter()
        pred = predict_region(pair[0], v, pair[1])
        return pred, time.perf_counter() - t0

    with ThreadPoolExecutor(max_workers=worker_cap(workers)) as pool:
        results = list(pool.map(job, zip(models, specs)))
    if timings is not None:
        timings.update({s.name: t for s, (_, t) in zip(specs, results)})
    return fuse_regions([p for p, _ in results], specs, v.shape, v.spacing, v.origin)


def predict_full_patch_based(model: UNetModel, v: Volume, plan: PatchPlan) -> LabelMap:
    """Patchwise softmax, mean-stitched, then argmax.

    Patches are inferred and accumulated one at a time, so memory stays at
    one patch plus the class-probability sum.
    """
    if model.config.num_classes != NUM_GLOBAL_CLASSES:
        raise ShapeMismatch(f"patch model needs {NUM_GLOBAL_CLASSES} classes, "
                            f"has {model.config.num_classes}")
    probs = (predict_probs(model, p[None, None])[0]
             for p in iter_patches(np.asarray(v.voxels), plan, 0.0))
    full = stitch(probs, plan, NUM_GLOBAL_CLASSES)
    return LabelMap(np.argmax(full, axis=0), v.spacing, v.origin, NUM_GLOBAL_CLASSES)


def restore(checkpoint: bytes) -> UNetModel:
    return model_from_bytes(checkpoint)


__all__ = ["EpochRecord", "TrainHistory", "TrainSchedule", "patch_dataset", "predict_full_patch_based",
           "predict_full_region_based", "predict_probs", "predict_region", "region_dataset",
           "restore", "train_region", "validation_dsc", "worker_cap"]
