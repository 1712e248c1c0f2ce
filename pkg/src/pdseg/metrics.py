"""Segmentation quality metrics: Dice, Jaccard, HD95, lesion-wise F1.

All functions take two binary grids (anything > 0.5 counts as foreground)
of equal shape and are symmetric where the definition is. Conventions for
degenerate inputs, chosen so lesion-free slices stay defined:

* overlap metrics: both masks empty -> 1 (perfect agreement);
* HD95: both empty -> 0, exactly one empty -> the pixel-center diagonal
  sqrt((H-1)^2 + (W-1)^2), the largest possible pixel distance.

Distances are in pixel units (isotropic grids only). HD95 percentiles use
the nearest-rank rule, so results are deterministic and comparable across
implementations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

_EIGHT = np.ones((3, 3), dtype=int)


def _as_bool(grid: np.ndarray) -> np.ndarray:
    return np.asarray(grid) > 0.5


def _check_same_shape(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p, g = _as_bool(pred), _as_bool(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    if p.ndim != 2:
        raise ValueError("metrics expect 2-d grids")
    return p, g


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    p, g = _check_same_shape(pred, gt)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    p, g = _check_same_shape(pred, gt)
    union = int((p | g).sum())
    if union == 0:
        return 1.0
    return int((p & g).sum()) / union


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Coordinates of foreground pixels with a background 4-neighbor.

    The image border counts as background, so a mask touching the edge
    still has a boundary there.
    """
    m = _as_bool(mask)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return np.argwhere(m & ~interior)


def _nearest_rank_percentile(values: np.ndarray, q: float) -> float:
    ordered = np.sort(values)
    k = max(1, math.ceil(q / 100.0 * len(ordered)))
    return float(ordered[k - 1])


def hd95(pred: np.ndarray, gt: np.ndarray) -> float:
    """Symmetric 95th-percentile Hausdorff distance between boundaries."""
    p, g = _check_same_shape(pred, gt)
    p_any, g_any = bool(p.any()), bool(g.any())
    if not p_any and not g_any:
        return 0.0
    if p_any != g_any:
        h, w = p.shape
        return math.hypot(h - 1, w - 1)
    bp = boundary_pixels(p).astype(np.float64)
    bg = boundary_pixels(g).astype(np.float64)
    d_pg, _ = cKDTree(bg).query(bp)
    d_gp, _ = cKDTree(bp).query(bg)
    return max(_nearest_rank_percentile(d_pg, 95.0), _nearest_rank_percentile(d_gp, 95.0))


def lesion_f1(pred: np.ndarray, gt: np.ndarray) -> float:
    """Lesion-wise F1 over 8-connected components matched by any overlap.

    A predicted component counts as a true positive if it overlaps any
    ground-truth foreground; a ground-truth component counts as detected if
    any predicted foreground touches it. Distinct from pixel-level Dice: a
    tiny detected lesion scores just as much as a large one.
    """
    p, g = _check_same_shape(pred, gt)
    if not p.any() and not g.any():
        return 1.0
    p_labels, n_pred = ndimage.label(p, structure=_EIGHT)
    g_labels, n_gt = ndimage.label(g, structure=_EIGHT)
    tp_pred = sum(1 for i in range(1, n_pred + 1) if g[p_labels == i].any())
    detected_gt = sum(1 for j in range(1, n_gt + 1) if p[g_labels == j].any())
    precision = tp_pred / n_pred if n_pred else 0.0
    recall = detected_gt / n_gt if n_gt else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


METRIC_NAMES = ("dice", "jaccard", "hd95", "f1")


def compute_all(pred: np.ndarray, gt: np.ndarray) -> dict[str, float]:
    return {
        "dice": dice(pred, gt),
        "jaccard": jaccard(pred, gt),
        "hd95": hd95(pred, gt),
        "f1": lesion_f1(pred, gt),
    }


@dataclass(frozen=True)
class MetricReport:
    """Per-case metric values plus their dataset means."""

    per_case: dict[str, dict[str, float]]

    @property
    def mean(self) -> dict[str, float]:
        if not self.per_case:
            return {name: float("nan") for name in METRIC_NAMES}
        return {
            name: float(np.mean([row[name] for row in self.per_case.values()]))
            for name in METRIC_NAMES
        }

    @classmethod
    def from_predictions(cls, pairs: dict[str, tuple[np.ndarray, np.ndarray]]) -> "MetricReport":
        return cls({case_id: compute_all(p, g) for case_id, (p, g) in pairs.items()})
