"""Class-weighted cross-entropy and soft Dice, each with an exact gradient."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadConfig, LabelOutOfRange, ShapeMismatch
from .tensor.core import Tensor, make_result


@dataclass(frozen=True)
class ClassWeights:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size < 2 or not np.all(np.isfinite(v)) or (v < 0).any() or not (v > 0).any():
            raise BadConfig(f"class weights must be finite, nonnegative and not all zero: {v}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def uniform(cls, num_classes: int) -> "ClassWeights":
        return cls(np.ones(num_classes))


def class_weights(labels, num_classes: int, mode: str = "inverse_frequency") -> ClassWeights:
    """Weights from the voxel counts of ``labels`` (one array or an iterable).

    ``inverse_frequency``: w_c proportional to 1/count_c, rescaled to mean 1
    over the classes that occur; classes that never occur get 0.
    ``uniform``: all ones.
    """
    if mode == "uniform":
        return ClassWeights.uniform(num_classes)
    if mode != "inverse_frequency":
        raise BadConfig(f"unknown class weighting {mode!r}")
    arrays = [labels] if isinstance(labels, np.ndarray) else list(labels)
    counts = np.zeros(num_classes, dtype=np.int64)
    for a in arrays:
        a = np.asarray(getattr(a, "labels", a))
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            raise LabelOutOfRange(f"labels outside 0..{num_classes - 1}")
        counts += np.bincount(a.ravel(), minlength=num_classes)
    present = counts > 0
    if not present.any():
        raise BadConfig("no voxels to weight")
    w = np.zeros(num_classes)
    w[present] = 1.0 / counts[present]
    w[present] /= w[present].mean()
    return ClassWeights(w)


def _target_array(target, logits_shape) -> np.ndarray:
    t = np.asarray(getattr(target, "labels", target))
    expect = (logits_shape[0],) + logits_shape[2:]
    if t.shape != expect:
        raise ShapeMismatch(f"target shape {t.shape} != {expect}")
    c = logits_shape[1]
    if t.size and (t.min() < 0 or t.max() >= c):
        raise LabelOutOfRange(f"target labels must lie in 0..{c - 1}")
    return t.astype(np.intp, copy=False)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def weighted_cross_entropy(logits: Tensor, target, weights: ClassWeights | None = None) -> Tensor:
    """Mean of -w_t log softmax_t over voxels, normalized by the summed weights.

    ``target`` holds integer class ids shaped like ``logits`` minus the
    channel axis.
    """
    z = logits.data
    t = _target_array(target, z.shape)
    c = z.shape[1]
    w = np.ones(c) if weights is None else np.asarray(weights.values)
    if w.size != c:
        raise ShapeMismatch(f"{w.size} class weights for {c} classes")

    logp = _log_softmax(z)
    onehot = np.moveaxis(np.eye(c, dtype=np.float64)[t], -1, 1)
    wv = w[t]                                   # per-voxel weight
    n_eff = wv.sum()
    if n_eff <= 0:
        raise LabelOutOfRange("target contains only zero-weight classes")
    picked = (logp * onehot).sum(axis=1)
    loss = -float((wv * picked).sum() / n_eff)

    def backward(g):
        p = np.exp(logp)
        return (float(g) * (p - onehot) * (wv / n_eff)[:, None],)

    return make_result(np.array(loss), (logits,), backward)


def one_hot(target, num_classes: int) -> np.ndarray:
    """(b, ...) integer ids -> (b, C, ...) float one-hot."""
    t = np.asarray(getattr(target, "labels", target)).astype(np.intp, copy=False)
    if t.size and (t.min() < 0 or t.max() >= num_classes):
        raise LabelOutOfRange(f"labels must lie in 0..{num_classes - 1}")
    return np.moveaxis(np.eye(num_classes, dtype=np.float64)[t], -1, 1)


def soft_dice_loss(probs: Tensor, target, epsilon: float = 1.0) -> Tensor:
    """1 - mean over foreground classes of (2 sum pg + eps) / (sum p + sum g + eps).

    Sums run over every voxel of the batch. ``target`` is either integer ids
    (one-hot is built here) or an already one-hot array shaped like ``probs``.
    """
    p = probs.data
    c = p.shape[1]
    tg = np.asarray(getattr(target, "labels", target))
    if tg.shape == p.shape:
        g = tg.astype(np.float64, copy=False)
    else:
        g = one_hot(_target_array(tg, p.shape), c)
    if c < 2:
        raise ShapeMismatch("soft Dice needs at least one foreground class")

    axes = (0,) + tuple(range(2, p.ndim))
    inter = (p * g).sum(axis=axes)[1:]
    total = (p.sum(axis=axes) + g.sum(axis=axes))[1:]
    denom = total + epsilon
    ratio = (2.0 * inter + epsilon) / denom
    nf = c - 1
    loss = 1.0 - float(ratio.sum() / nf)

    def backward(gout):
        shape = (1, nf) + (1,) * (p.ndim - 2)
        num = (2.0 * inter + epsilon).reshape(shape)
        den = denom.reshape(shape)
        grad = np.zeros_like(p)
        grad[:, 1:] = -(2.0 * g[:, 1:] * den - num) / (den * den) / nf
        return (float(gout) * grad,)

    return make_result(np.array(loss), (probs,), backward)


__all__ = ["ClassWeights", "class_weights", "one_hot", "soft_dice_loss", "weighted_cross_entropy"]
