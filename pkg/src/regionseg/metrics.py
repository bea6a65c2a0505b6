"""Overlap and surface metrics, the paired signed-rank test, and summaries."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .errors import AllZeroDifferences, EmptyStructure, ShapeMismatch

EXACT_WILCOXON_MAX_N = 25


def _labels(a) -> np.ndarray:
    return np.asarray(getattr(a, "labels", a))


def _pair(a, b):
    a, b = _labels(a), _labels(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"label maps differ in shape: {a.shape} vs {b.shape}")
    return a, b


def dsc(a, b, label: int) -> float:
    """2|A n B| / (|A| + |B|); 1.0 when both are empty."""
    a, b = _pair(a, b)
    ma, mb = a == label, b == label
    na, nb = int(ma.sum()), int(mb.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / (na + nb)


def mean_foreground_dsc(a, b, labels) -> float:
    return float(np.mean([dsc(a, b, l) for l in labels]))


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one 6-connected neighbour outside the mask;
    the volume border counts as outside."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    inner = padded[1:-1, 1:-1, 1:-1].copy()
    for axis in range(3):
        for step in (-1, 1):
            inner &= np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
    return mask & ~inner


def _distance_to(target_boundary: np.ndarray, spacing) -> np.ndarray:
    # EDT measures distance to the nearest zero, so zero out the boundary
    return ndimage.distance_transform_edt(~target_boundary, sampling=spacing)


def surface_distances(a, b, label: int, spacing=(1.0, 1.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Distances in mm from each boundary voxel of A to the nearest boundary
    voxel of B, and from B to A."""
    a, b = _pair(a, b)
    ba, bb = boundary(a == label), boundary(b == label)
    if not ba.any() or not bb.any():
        raise EmptyStructure(f"label {label} is empty in {'the first' if not ba.any() else 'the second'} map")
    spacing = tuple(float(s) for s in spacing)
    return _distance_to(bb, spacing)[ba], _distance_to(ba, spacing)[bb]


def percentile95(values) -> float:
    """95th percentile with linear interpolation between order statistics."""
    return float(np.percentile(np.asarray(values, dtype=np.float64), 95))


def hd95(a, b, label: int, spacing=(1.0, 1.0, 1.0), pooled: bool = True) -> float:
    """95th percentile (linear interpolation) of the surface distances.

    ``pooled`` uses the union of both directed sets; otherwise the larger of
    the two directed 95th percentiles.
    """
    dab, dba = surface_distances(a, b, label, spacing)
    if pooled:
        return percentile95(np.concatenate([dab, dba]))
    return max(percentile95(dab), percentile95(dba))


def _signed_rank_parts(x, y):
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    if d.ndim != 1:
        raise ShapeMismatch("paired samples must be 1-D and equally long")
    d = d[d != 0]
    if d.size == 0:
        raise AllZeroDifferences("every paired difference is zero")
    ranks = rankdata(np.abs(d))  # average ranks for ties
    return d, ranks


def _exact_p(ranks: np.ndarray, w: float) -> float:
    """P(min(W+, W-) <= w) under random signs, by counting subsets.

    Ranks are doubled to integers (ties give half-ranks) and subset sums
    are counted with a dynamic program, which matches full enumeration.
    """
    r2 = [int(v) for v in np.rint(2 * ranks)]
    total = sum(r2)
    counts = [1] + [0] * total
    for r in r2:
        counts = [c + (counts[s - r] if s >= r else 0) for s, c in enumerate(counts)]
    w2 = int(round(2 * w))
    if 2 * w2 >= total:
        return 1.0
    # the null distribution is symmetric, so both tails are equal
    return min(1.0, 2 * sum(counts[: w2 + 1]) / 2 ** len(r2))


def wilcoxon_signed_rank(x, y) -> tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped and tied |d| share average ranks. Returns
    (W, p) with W = min(W+, W-). Up to 25 non-zero pairs p is exact; above
    that a normal approximation with tie and continuity corrections is used.
    """
    d, ranks = _signed_rank_parts(x, y)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    n = d.size
    if n <= EXACT_WILCOXON_MAX_N:
        return w, _exact_p(ranks, w)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_counts ** 3 - tie_counts).sum()) / 48.0
    if var <= 0:
        return w, 1.0
    z = (w - mean + 0.5) / math.sqrt(var)
    z = min(z, 0.0)
    return w, min(1.0, math.erfc(-z / math.sqrt(2.0)))


def wilcoxon_enumerate(x, y) -> tuple[float, float]:
    """Reference p-value by walking all 2^n sign assignments (small n only)."""
    d, ranks = _signed_rank_parts(x, y)
    w = min(float(ranks[d > 0].sum()), float(ranks[d < 0].sum()))
    total = float(ranks.sum())
    hits = 0
    for signs in itertools.product((0, 1), repeat=d.size):
        wp = float(np.dot(signs, ranks))
        if min(wp, total - wp) <= w + 1e-9:
            hits += 1
    return w, hits / 2 ** d.size


@dataclass
class EvalRecord:
    subject: str
    dsc: dict[str, float] = field(default_factory=dict)
    hd95: dict[str, float | None] = field(default_factory=dict)   # None = undefined


def evaluate(subject: str, pred, truth, labels: dict[int, str], spacing=(1.0, 1.0, 1.0),
             pooled: bool = True) -> EvalRecord:
    rec = EvalRecord(subject)
    for lab, name in labels.items():
        rec.dsc[name] = dsc(pred, truth, lab)
        try:
            rec.hd95[name] = hd95(pred, truth, lab, spacing, pooled)
        except EmptyStructure:
            rec.hd95[name] = None
    return rec


def fmt_mean_std(mean: float, std: float, digits: int = 3) -> str:
    return f"{mean:.{digits}f}±{std:.{digits}f}"


@dataclass
class SummaryRow:
    structure: str
    dsc_mean: float
    dsc_std: float
    hd95_mean: float | None
    n: int
    hd95_n: int


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def summarize(records: list[EvalRecord]) -> list[SummaryRow]:
    """Per structure (in first-record order) plus a final 'average' row over
    all structure means."""
    if not records:
        raise ValueError("summarize needs at least one record")
    names = list(records[0].dsc)
    rows = []
    for name in names:
        ds = [r.dsc[name] for r in records]
        hs = [r.hd95.get(name) for r in records if r.hd95.get(name) is not None]
        m, s = _mean_std(ds)
        rows.append(SummaryRow(name, m, s, float(np.mean(hs)) if hs else None, len(ds), len(hs)))
    per_subject = [np.mean([r.dsc[n] for n in names]) for r in records]
    m, s = _mean_std(per_subject)
    hs = [r.hd95[n] for r in records for n in names if r.hd95.get(n) is not None]
    rows.append(SummaryRow("average", m, s, float(np.mean(hs)) if hs else None,
                           len(records), len(hs)))
    return rows


def format_summary(rows: list[SummaryRow], digits: int = 3) -> str:
    """Aligned text table: structure, DSC mean±std, mean HD95 (mm), n."""
    table = [("structure", "DSC", "HD95 (mm)", "n")]
    for r in rows:
        hd = "undefined" if r.hd95_mean is None else f"{r.hd95_mean:.{digits}f}"
        if r.hd95_mean is not None and r.hd95_n < r.n:
            hd += f" ({r.hd95_n} of {r.n})"
        table.append((r.structure, fmt_mean_std(r.dsc_mean, r.dsc_std, digits), hd, str(r.n)))
    widths = [max(len(row[i]) for row in table) for i in range(4)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table)


def write_records_csv(records: list[EvalRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "structure", "dsc", "hd95"])
        for r in records:
            for name, d in r.dsc.items():
                h = r.hd95.get(name)
                w.writerow([r.subject, name, repr(d), "" if h is None else repr(h)])


def write_summary_csv(rows: list[SummaryRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["structure", "dsc_mean", "dsc_std", "hd95_mean", "n"])
        for r in rows:
            w.writerow([r.structure, repr(r.dsc_mean), repr(r.dsc_std),
                        "" if r.hd95_mean is None else repr(r.hd95_mean), r.n])


def read_records_csv(path) -> list[EvalRecord]:
    out: dict[str, EvalRecord] = {}
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            rec = out.setdefault(row["subject"], EvalRecord(row["subject"]))
            rec.dsc[row["structure"]] = float(row["dsc"])
            rec.hd95[row["structure"]] = float(row["hd95"]) if row["hd95"] else None
    return list(out.values())


__all__ = ["EvalRecord", "SummaryRow", "boundary", "dsc", "evaluate", "fmt_mean_std",
           "format_summary", "hd95", "mean_foreground_dsc", "percentile95", "read_records_csv", "summarize",
           "surface_distances", "wilcoxon_enumerate", "wilcoxon_signed_rank",
           "write_records_csv", "write_summary_csv"]
