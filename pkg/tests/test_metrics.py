import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pdseg.metrics import MetricReport, boundary_pixels, compute_all, dice, hd95, jaccard, lesion_f1


def grid(size=8):
    return np.zeros((size, size))


def _brute_force_hd95(pred, gt):
    """Independent all-pairs implementation: explicit loops, own boundary
    extraction, nearest-rank percentile by hand."""
    pred = np.asarray(pred) > 0.5
    gt = np.asarray(gt) > 0.5
    if not pred.any() and not gt.any():
        return 0.0
    if pred.any() != gt.any():
        h, w = pred.shape
        return math.sqrt((h - 1) ** 2 + (w - 1) ** 2)

    def boundary(mask):
        h, w = mask.shape
        out = []
        for y in range(h):
            for x in range(w):
                if not mask[y, x]:
                    continue
                for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < h and 0 <= nx < w) or not mask[ny, nx]:
                        out.append((y, x))
                        break
        return out

    def directed(src, dst):
        dists = sorted(
            min(math.hypot(sy - dy, sx - dx) for dy, dx in dst) for sy, sx in src
        )
        k = max(1, math.ceil(0.95 * len(dists)))
        return dists[k - 1]

    bp, bg = boundary(pred), boundary(gt)
    return max(directed(bp, bg), directed(bg, bp))


def test_dice_identical_masks():
    m = grid()
    m[2:5, 2:5] = 1
    assert dice(m, m) == 1.0


def test_dice_disjoint_masks():
    a, b = grid(), grid()
    a[0, 0] = 1
    b[5, 5] = 1
    assert dice(a, b) == 0.0


def test_dice_hand_count():
    # |P| = 4, |G| = 4, |P ∩ G| = 2 on a 4x4 grid.
    p = np.zeros((4, 4))
    g = np.zeros((4, 4))
    p[0, 0] = p[0, 1] = p[1, 0] = p[1, 1] = 1
    g[1, 0] = g[1, 1] = g[2, 0] = g[2, 1] = 1
    assert dice(p, g) == 0.5


def test_dice_both_empty():
    assert dice(grid(), grid()) == 1.0


def test_jaccard_hand_count():
    p = np.zeros((4, 4))
    g = np.zeros((4, 4))
    p[0, :2] = 1
    p[1, :2] = 1
    g[1, :2] = 1
    g[2, :2] = 1
    # intersection 2, union 6
    assert jaccard(p, g) == pytest.approx(1.0 / 3.0)


def test_metric_shape_validation():
    for fn in (dice, jaccard, hd95, lesion_f1):
        with pytest.raises(ValueError):
            fn(np.zeros((3, 3)), np.zeros((3, 4)))


def test_hd95_equal_masks_is_zero():
    m = grid()
    m[2:6, 3:7] = 1
    assert hd95(m, m) == 0.0


def test_hd95_three_four_five():
    a, b = grid(), grid()
    a[0, 0] = 1
    b[3, 4] = 1
    assert hd95(a, b) == 5.0
    assert hd95(b, a) == 5.0


def test_hd95_empty_conventions():
    assert hd95(grid(), grid()) == 0.0
    m = grid(8)
    m[4, 4] = 1
    assert hd95(m, grid(8)) == pytest.approx(math.hypot(7, 7))
    assert hd95(grid(8), m) == pytest.approx(math.hypot(7, 7))


def test_hd95_square_shift_matches_brute_force():
    a, b = np.zeros((16, 16)), np.zeros((16, 16))
    a[4:9, 4:9] = 1
    b[4:9, 6:11] = 1
    assert hd95(a, b) == pytest.approx(_brute_force_hd95(a, b), abs=0)


@settings(max_examples=30, deadline=None)
@given(
    a=hnp.arrays(bool, (9, 9), elements=st.booleans()),
    b=hnp.arrays(bool, (9, 9), elements=st.booleans()),
)
def test_hd95_matches_brute_force_on_random_masks(a, b):
    assert hd95(a, b) == pytest.approx(_brute_force_hd95(a, b), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    a=hnp.arrays(bool, (8, 8), elements=st.booleans()),
    b=hnp.arrays(bool, (8, 8), elements=st.booleans()),
)
def test_symmetry_and_jaccard_dice_identity(a, b):
    assert dice(a, b) == dice(b, a)
    assert jaccard(a, b) == jaccard(b, a)
    assert hd95(a, b) == hd95(b, a)
    d = dice(a, b)
    assert jaccard(a, b) == pytest.approx(d / (2.0 - d), abs=1e-12)


def test_translation_invariance():
    a, b = np.zeros((16, 16)), np.zeros((16, 16))
    a[2:5, 2:6] = 1
    b[3:7, 2:5] = 1
    values = compute_all(a, b)
    shifted = compute_all(np.roll(a, (4, 5), (0, 1)), np.roll(b, (4, 5), (0, 1)))
    for name in values:
        assert values[name] == pytest.approx(shifted[name], abs=1e-12)


def test_boundary_uses_border_as_background():
    m = np.ones((4, 4))
    assert len(boundary_pixels(m)) == 12  # interior 2x2 is not boundary


def test_lesion_f1_identical_blobs():
    m = grid(12)
    m[0:2, 0:2] = 1
    m[5:7, 5:7] = 1
    m[9:11, 2:4] = 1
    assert lesion_f1(m, m) == 1.0


def test_lesion_f1_half_detected_half_spurious():
    gt = grid(12)
    gt[0:2, 0:2] = 1
    gt[8:10, 8:10] = 1
    pred = grid(12)
    pred[0:2, 0:2] = 1  # covers first blob exactly
    pred[4:6, 4:6] = 1  # spurious
    assert lesion_f1(pred, gt) == 0.5


def test_lesion_f1_empty_cases():
    m = grid()
    m[3, 3] = 1
    assert lesion_f1(grid(), m) == 0.0
    assert lesion_f1(m, grid()) == 0.0
    assert lesion_f1(grid(), grid()) == 1.0


def test_lesion_f1_eight_connectivity():
    # Diagonal contact merges components under 8-connectivity.
    a = grid()
    a[2, 2] = 1
    a[3, 3] = 1
    assert lesion_f1(a, a) == 1.0
    gt = grid()
    gt[2, 2] = 1
    assert lesion_f1(a, gt) == 1.0  # one predicted component, overlapping


def test_metric_report_means():
    p1, g1 = grid(), grid()
    p1[2:4, 2:4] = 1
    g1[2:4, 2:4] = 1
    p2, g2 = grid(), grid()
    p2[0, 0] = 1
    g2[5, 5] = 1
    rep = MetricReport.from_predictions({"a": (p1, g1), "b": (p2, g2)})
    assert rep.per_case["a"]["dice"] == 1.0
    assert rep.mean["dice"] == pytest.approx((1.0 + 0.0) / 2)
    assert set(rep.mean) == {"dice", "jaccard", "hd95", "f1"}
