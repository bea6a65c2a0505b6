"""Fuzzy c-means intensity normalization.

FCM finds c tissue intensity modes inside the brain mask; the brightest one
(white matter on T1) is mapped to a fixed target so scans from different
scanners share one intensity scale.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateData
from .volume import LabelMap, Volume

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FcmResult:
    centroids: np.ndarray       # (c,), ascending
    memberships: np.ndarray     # (n, c), rows sum to 1
    iterations: int
    final_shift: float
    objective: list[float] = field(default_factory=list)  # one entry per update


def _memberships(x: np.ndarray, centroids: np.ndarray, m: float) -> np.ndarray:
    d = np.abs(x[:, None] - centroids[None, :])
    dmin = d.min(axis=1, keepdims=True)
    hit = dmin[:, 0] == 0
    p = 2.0 / (m - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # ratios in (0, 1] keep the power finite
        w = (dmin / d) ** p
        w[hit] = 0.0
        u = w / w.sum(axis=1, keepdims=True)   # hit rows are 0/0, fixed below
    if hit.any():
        # voxel sits exactly on a centroid: full membership there
        u[hit] = 0.0
        u[hit, np.argmin(d[hit], axis=1)] = 1.0
    return u


def _objective(x, centroids, u, m) -> float:
    return float(np.sum((u ** m) * (x[:, None] - centroids[None, :]) ** 2))


def _initial_centroids(x: np.ndarray, c: int) -> np.ndarray:
    qs = (np.arange(c) + 0.5) / c
    init = np.quantile(x, qs)
    if np.all(np.diff(init) > 0):
        return init
    # heavy ties: fall back to quantiles of the distinct values
    return np.quantile(np.unique(x), qs)


def fcm_cluster(intensities, c: int = 3, m: float = 2.0, tol: float = 1e-6,
                max_iter: int = 200, seed: int = 0,
                max_samples: int | None = None) -> FcmResult:
    """Fuzzy c-means on a 1-D sample.

    Centroids start at the data quantiles (k + 0.5)/c and the membership and
    centroid updates alternate until the largest centroid move falls below
    ``tol`` times the data range, or ``max_iter`` updates have run (not an
    error). ``seed`` only matters when ``max_samples`` subsamples the input.
    """
    x = np.asarray(intensities, dtype=np.float64).ravel()
    if c < 2:
        raise ValueError("need at least 2 clusters")
    if m <= 1:
        raise ValueError("fuzziness exponent m must exceed 1")
    if np.unique(x).size < c:
        raise DegenerateData(f"need at least {c} distinct intensities, got {np.unique(x).size}")
    if max_samples is not None and x.size > max_samples:
        rng = np.random.default_rng(seed)
        x = np.sort(rng.choice(x, size=max_samples, replace=False))

    scale = float(x.max() - x.min())
    centroids = _initial_centroids(x, c)
    history = []
    shift = np.inf
    it = 0
    u = _memberships(x, centroids, m)
    while it < max_iter:
        um = u ** m
        new = (um * x[:, None]).sum(axis=0) / um.sum(axis=0)
        shift = float(np.max(np.abs(new - centroids)))
        centroids = new
        history.append(_objective(x, centroids, u, m))
        u = _memberships(x, centroids, m)
        history.append(_objective(x, centroids, u, m))
        it += 1
        if shift < tol * scale:
            break
    if it == max_iter and shift >= tol * scale:
        logger.info("fcm_cluster: no convergence after %d iterations (shift %.3g)", it, shift)

    order = np.argsort(centroids, kind="stable")
    return FcmResult(centroids[order], u[:, order], it, shift, history)


@dataclass(frozen=True)
class NormalizationSummary:
    centroids: np.ndarray
    scale: float
    iterations: int


def fcm_normalize(v: Volume, brain_mask: LabelMap | np.ndarray | None = None, c: int = 3,
                  target: float = 1.0, **fcm_kwargs) -> tuple[Volume, NormalizationSummary]:
    """Scale ``v`` so its brightest FCM tissue centroid lands on ``target``.

    Without a mask, nonzero voxels are taken as brain (inputs are skull
    stripped). Voxels outside the mask are scaled by the same factor.
    """
    if brain_mask is None:
        mask = v.voxels != 0
    else:
        mask = np.asarray(getattr(brain_mask, "labels", brain_mask)) != 0
        if mask.shape != v.shape:
            raise ValueError(f"mask shape {mask.shape} != volume shape {v.shape}")
    res = fcm_cluster(v.voxels[mask], c=c, **fcm_kwargs)
    wm = float(res.centroids[-1])
    if wm <= 0:
        raise DegenerateData(f"brightest centroid {wm} is not positive")
    factor = target / wm
    return v.with_voxels(v.voxels * factor), NormalizationSummary(res.centroids, factor, res.iterations)


def normalize_wm(v: Volume, brain_mask=None, c: int = 3, target: float = 1.0) -> Volume:
    return fcm_normalize(v, brain_mask, c=c, target=target)[0]
