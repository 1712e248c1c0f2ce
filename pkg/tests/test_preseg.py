import numpy as np
import pytest

from pdseg.metrics import dice
from pdseg.preseg import (
    DegradationError,
    DegradationSpec,
    PresegConfig,
    PresegNet,
    degrade_to_dice,
    segment,
)
from pdseg.rng import Rng


def blob_mask(size=32, n_px_side=14):
    mask = np.zeros((size, size))
    mask[8 : 8 + n_px_side, 9 : 9 + n_px_side] = 1.0  # 196 px block
    return mask


def test_untrained_net_outputs_constant_half():
    model = PresegNet(PresegConfig(base_channels=8))
    out = model.segment(Rng(0).uniform((16, 16)))
    assert np.all(out == 0.5)  # zero-initialized head through a sigmoid


def test_segment_output_in_unit_range():
    model = PresegNet(PresegConfig(base_channels=8))
    out = segment(Rng(1).standard_normal((16, 16)), model)
    assert out.shape == (16, 16)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_segment_validates_dimensions():
    model = PresegNet(PresegConfig(base_channels=8, depth=2))
    with pytest.raises(ValueError):
        model.segment(np.zeros((10, 10)))  # not divisible by 2**depth
    with pytest.raises(ValueError):
        model.segment(np.zeros((3, 16, 16)))


def test_degrade_target_one_returns_ground_truth():
    gt = blob_mask()
    out = degrade_to_dice(gt, DegradationSpec(target_dice=1.0, seed=1))
    assert np.array_equal(out, gt)
    assert dice(out, gt) == 1.0


def test_degrade_target_zero_returns_empty_map():
    gt = blob_mask()
    out = degrade_to_dice(gt, DegradationSpec(target_dice=0.0, seed=1))
    assert np.all(out == 0.0)
    assert dice(out, gt) == 0.0


def test_degrade_hits_intermediate_target():
    gt = blob_mask()  # ~200 foreground pixels
    out = degrade_to_dice(gt, DegradationSpec(target_dice=0.75, seed=3))
    assert 0.73 <= dice(out, gt) <= 0.77
    assert set(np.unique(out)) <= {0.0, 1.0}


@pytest.mark.parametrize("target", [0.3, 0.5, 0.9, 0.95])
def test_degrade_various_targets(target):
    gt = blob_mask()
    out = degrade_to_dice(gt, DegradationSpec(target_dice=target, seed=7))
    assert abs(dice(out, gt) - target) <= 0.02


def test_degrade_deterministic_per_seed():
    gt = blob_mask()
    spec = DegradationSpec(target_dice=0.6, seed=11)
    assert np.array_equal(degrade_to_dice(gt, spec), degrade_to_dice(gt, spec))
    other = degrade_to_dice(gt, DegradationSpec(target_dice=0.6, seed=12))
    assert not np.array_equal(degrade_to_dice(gt, spec), other)


def test_degrade_empty_ground_truth_rejected():
    with pytest.raises(ValueError):
        degrade_to_dice(np.zeros((8, 8)), DegradationSpec(target_dice=0.5))
    # target 0 is fine even without foreground
    out = degrade_to_dice(np.zeros((8, 8)), DegradationSpec(target_dice=0.0))
    assert np.all(out == 0.0)


def test_degrade_unreachable_target_raises():
    # A single-pixel mask can only realize Dice values 2/(1+|P|):
    # {1, 2/3, 1/2, ...}; 0.8 +/- 0.02 is not among them.
    gt = np.zeros((8, 8))
    gt[4, 4] = 1.0
    with pytest.raises(DegradationError):
        degrade_to_dice(gt, DegradationSpec(target_dice=0.8, seed=0))


def test_degradation_spec_validation():
    with pytest.raises(ValueError):
        DegradationSpec(target_dice=1.5)
    with pytest.raises(ValueError):
        DegradationSpec(target_dice=0.5, tolerance=0.0)
