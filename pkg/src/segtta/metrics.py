"""Volume-level segmentation metrics, cohort aggregation, and the paired
one-sided Wilcoxon signed-rank test with Holm-Bonferroni correction.

Conventions (fixed and documented because cohorts with near-empty predictions
need a deterministic policy):

* dice: both masks empty -> 1.0
* precision: empty prediction -> 1.0 if the reference is empty, else 0.0
* hd95: both empty -> 0.0; exactly one empty -> a penalty distance, by default
  the physical diagonal of the volume
* hd95 pools the two directed surface-distance sets before taking the 95th
  percentile (linear interpolation); a max-of-directional-percentiles variant
  is available via ``method="max_directional"``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import rankdata

from .volume import Mask, require_same_grid


@dataclass(frozen=True)
class MetricSet:
    dice: float
    hd95_mm: float
    precision: float


@dataclass(frozen=True)
class CohortStats:
    n: int
    dice_mean: float
    dice_std: float
    hd95_mean: float
    hd95_std: float
    precision_mean: float
    precision_std: float
    degenerate: bool = False  # true when n == 1 (std reported as 0)


@dataclass(frozen=True)
class WilcoxonResult:
    metric: str
    direction: str           # "greater" or "less" (alternative for pred-vs-ref diffs)
    n_nonzero: int
    statistic: float         # W+ of the oriented differences
    p_raw: float
    p_adjusted: float
    method: str              # "exact" | "normal" | "degenerate"
    degenerate: bool = False


def dice(pred: Mask, gt: Mask) -> float:
    """2|A n B| / (|A| + |B|); both empty counts as perfect agreement."""
    require_same_grid(pred, gt, "prediction and reference masks")
    a, b = pred.data, gt.data
    denom = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if denom == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / denom


def precision(pred: Mask, gt: Mask) -> float:
    """TP / (TP + FP); an empty prediction is perfect iff the reference is empty."""
    require_same_grid(pred, gt, "prediction and reference masks")
    n_pred = int(np.count_nonzero(pred.data))
    if n_pred == 0:
        return 1.0 if int(np.count_nonzero(gt.data)) == 0 else 0.0
    tp = int(np.count_nonzero(pred.data & gt.data))
    return tp / n_pred


def surface_voxels(mask: Mask) -> np.ndarray:
    """Boolean array of boundary voxels: foreground with at least one of the six
    face-neighbors background, or lying on the volume border."""
    fg = mask.data
    boundary = np.zeros_like(fg)
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, 1)
        hi[axis] = slice(fg.shape[axis] - 1, None)
        boundary[tuple(lo)] |= fg[tuple(lo)]
        boundary[tuple(hi)] |= fg[tuple(hi)]
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(None, -1)
        b[axis] = slice(1, None)
        boundary[tuple(a)] |= fg[tuple(a)] & ~fg[tuple(b)]
        boundary[tuple(b)] |= fg[tuple(b)] & ~fg[tuple(a)]
    return boundary


def _surface_points_mm(mask: Mask) -> np.ndarray:
    idx = np.argwhere(surface_voxels(mask)).astype(np.float64)
    return idx * np.asarray(mask.spacing)


def volume_diagonal_mm(mask: Mask) -> float:
    return math.sqrt(sum((n * s) ** 2 for n, s in zip(mask.dims, mask.spacing)))


def hd95(
    pred: Mask,
    gt: Mask,
    empty_penalty_mm: float | None = None,
    method: str = "pooled",
) -> float:
    """95th percentile of bidirectional nearest-surface distances, in mm."""
    require_same_grid(pred, gt, "prediction and reference masks")
    n_pred = int(np.count_nonzero(pred.data))
    n_gt = int(np.count_nonzero(gt.data))
    if n_pred == 0 and n_gt == 0:
        return 0.0
    if n_pred == 0 or n_gt == 0:
        return float(empty_penalty_mm) if empty_penalty_mm is not None else volume_diagonal_mm(pred)
    a = _surface_points_mm(pred)
    b = _surface_points_mm(gt)
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    if method == "pooled":
        return float(np.percentile(np.concatenate([d_ab, d_ba]), 95.0))
    if method == "max_directional":
        return float(max(np.percentile(d_ab, 95.0), np.percentile(d_ba, 95.0)))
    raise ValueError(f"unknown hd95 method {method!r}")


def evaluate(pred: Mask, gt: Mask) -> MetricSet:
    return MetricSet(dice=dice(pred, gt), hd95_mm=hd95(pred, gt), precision=precision(pred, gt))


def aggregate(metric_sets: Sequence[MetricSet]) -> CohortStats:
    """Per-metric mean and sample (N-1) std; a single case reports std 0 with
    the degenerate flag set."""
    if len(metric_sets) < 1:
        raise ValueError("aggregate needs at least one metric set")
    arr = np.array([[m.dice, m.hd95_mm, m.precision] for m in metric_sets], dtype=np.float64)
    means = arr.mean(axis=0)
    if arr.shape[0] == 1:
        stds = np.zeros(3)
        degenerate = True
    else:
        stds = arr.std(axis=0, ddof=1)
        degenerate = False
    return CohortStats(
        n=arr.shape[0],
        dice_mean=float(means[0]), dice_std=float(stds[0]),
        hd95_mean=float(means[1]), hd95_std=float(stds[1]),
        precision_mean=float(means[2]), precision_std=float(stds[2]),
        degenerate=degenerate,
    )


# ---------------------------------------------------------------------------
# paired one-sided Wilcoxon signed-rank with Holm-Bonferroni step-down
# ---------------------------------------------------------------------------


def _wilcoxon_one_sided(diffs: Sequence[float], direction: str, method: str = "auto"):
    """Returns (W+, p, n_nonzero, method_used).  ``direction`` states the
    alternative for the differences: "greater" means median(diff) > 0."""
    if direction not in ("greater", "less"):
        raise ValueError(f"direction must be 'greater' or 'less', got {direction!r}")
    d = np.asarray(diffs, dtype=np.float64)
    if direction == "less":
        d = -d
    d = d[d != 0.0]  # zeros dropped
    n = d.size
    if n == 0:
        return 0.0, 1.0, 0, "degenerate"
    ranks = rankdata(np.abs(d))  # average ranks on ties
    w_plus = float(ranks[d > 0].sum())
    use_exact = method == "exact" or (method == "auto" and n <= 25)
    if use_exact:
        p = _exact_tail_geq(ranks, w_plus)
        return w_plus, p, n, "exact"
    # normal approximation with tie correction and continuity correction
    mu = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts) / 48.0).sum())
    sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
    if sigma == 0.0:
        return w_plus, 1.0, n, "degenerate"
    zscore = (w_plus - mu - 0.5) / sigma
    p = 0.5 * math.erfc(zscore / math.sqrt(2.0))
    return w_plus, p, n, "normal"


def _exact_tail_geq(ranks: np.ndarray, w_plus: float) -> float:
    """P(W+ >= observed) under the signed-rank null, by convolving the rank
    polynomial prod_i (1 + x^{2 r_i}) / 2^n.  Doubled ranks are integers even
    with averaged ties, so the distribution is exact; this enumerates all 2^n
    sign assignments implicitly."""
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    top = 0
    for r in doubled:
        counts[r : top + r + 1] += counts[0 : top + 1]
        top += r
    obs = int(np.rint(2.0 * w_plus))
    tail = counts[obs:].sum()
    return float(tail / counts.sum())


def holm_bonferroni(p_values: Sequence[float]) -> list[float]:
    """Step-down adjustment: sorted p_i -> max over j<=i of (m-j+1) p_(j), clipped at 1."""
    m = len(p_values)
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted = [0.0] * m
    running = 0.0
    for rank_idx, i in enumerate(order):
        running = max(running, (m - rank_idx) * p_values[i])
        adjusted[i] = min(1.0, running)
    return adjusted


def wilcoxon_holm(
    per_case_diffs: Mapping[str, Sequence[float]],
    directions: Mapping[str, str],
    method: str = "auto",
    min_nonzero: int = 6,
) -> dict[str, WilcoxonResult]:
    """Per-metric one-sided tests, Holm-adjusted across the metric family.

    ``per_case_diffs[metric]`` holds paired differences (one per case);
    ``directions[metric]`` is the alternative for those differences.  All-zero
    difference lists report p = 1 with the degenerate flag; fewer than
    ``min_nonzero`` nonzero differences (but more than zero) is a contract
    violation and raises.
    """
    names = list(per_case_diffs)
    raw: dict[str, tuple] = {}
    for name in names:
        stat, p, n, used = _wilcoxon_one_sided(per_case_diffs[name], directions[name], method)
        if 0 < n < min_nonzero:
            raise ValueError(
                f"metric {name!r} has only {n} nonzero paired differences; need >= {min_nonzero}"
            )
        raw[name] = (stat, p, n, used)
    adjusted = holm_bonferroni([raw[name][1] for name in names])
    out = {}
    for name, adj in zip(names, adjusted):
        stat, p, n, used = raw[name]
        out[name] = WilcoxonResult(
            metric=name,
            direction=directions[name],
            n_nonzero=n,
            statistic=stat,
            p_raw=p,
            p_adjusted=adj,
            method=used,
            degenerate=used == "degenerate",
        )
    return out


# ---------------------------------------------------------------------------
# emitters
# ---------------------------------------------------------------------------

CASE_CSV_FIELDS = ("case_id", "dice", "hd95_mm", "precision", "flagged", "source")


def case_rows_csv(rows: Sequence[Mapping[str, object]]) -> str:
    """One CSV row per case with the fixed column set."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CASE_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in CASE_CSV_FIELDS})
    return buf.getvalue()


def summary_json(stats: CohortStats) -> str:
    payload = {
        "n": stats.n,
        "dice": {"mean": stats.dice_mean, "std": stats.dice_std},
        "hd95_mm": {"mean": stats.hd95_mean, "std": stats.hd95_std},
        "precision": {"mean": stats.precision_mean, "std": stats.precision_std},
        "degenerate": stats.degenerate,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
