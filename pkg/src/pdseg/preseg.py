"""Pre-segmentation: a small trainable net and a Dice-calibrated oracle.

The accelerated sampler needs an approximate mask to diffuse from. Two
sources are provided:

* `PresegNet`, a compact encoder-decoder with skip connections trained with
  pixelwise binary cross-entropy, for the end-to-end path;
* `degrade_to_dice`, which corrupts the ground truth to a requested Dice
  score, for studying how pre-segmentation quality drives final accuracy
  without entangling it with training variance.

Degradation works in binary space by random boundary erosion/dilation:
true boundary pixels are dropped and false pixels are grown just outside
the mask, re-measuring Dice after every flip and greedily choosing the flip
that lands closest to the target. It either returns a mask within the
requested tolerance or raises; it never returns silently off-target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .metrics import dice
from .rng import Rng


class PresegModel(Protocol):
    def segment(self, image: np.ndarray) -> np.ndarray:
        """Probability map in [0, 1], same shape as the image."""
        ...


@dataclass(frozen=True)
class PresegConfig:
    base_channels: int = 16
    depth: int = 2

    def __post_init__(self):
        if self.base_channels < 1 or self.depth < 1:
            raise ValueError("base_channels and depth must be positive")

    def as_int_dict(self) -> dict[str, int]:
        return {"base_channels": self.base_channels, "depth": self.depth}


class _Block(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(min(8, out_ch), out_ch)

    def forward(self, x):
        h = F.silu(self.norm1(self.conv1(x)))
        return F.silu(self.norm2(self.conv2(h)))


class PresegNet(nn.Module):
    """Encoder-decoder segmenter; sigmoid probabilities out."""

    def __init__(self, config: PresegConfig = PresegConfig()):
        super().__init__()
        self.config = config
        widths = [config.base_channels * 2**i for i in range(config.depth + 1)]
        self.encoders = nn.ModuleList()
        in_ch = 1
        for w in widths:
            self.encoders.append(_Block(in_ch, w))
            in_ch = w
        self.pool = nn.MaxPool2d(2)
        self.decoders = nn.ModuleList(
            _Block(w + skip_w, skip_w)
            for skip_w, w in zip(reversed(widths[:-1]), reversed(widths[1:]))
        )
        self.head = nn.Conv2d(widths[0], 1, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        h = x
        for i, block in enumerate(self.encoders):
            if i > 0:
                h = self.pool(h)
            h = block(h)
            skips.append(h)
        for block, skip in zip(self.decoders, reversed(skips[:-1])):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, skip], dim=1))
        return self.head(h)

    @torch.no_grad()
    def segment(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise ValueError("segment expects one 2-d image")
        side = 2 ** self.config.depth
        if image.shape[0] % side or image.shape[1] % side:
            raise ValueError(f"grid dimensions must be divisible by {side}")
        x = torch.from_numpy(image.astype(np.float32))[None, None]
        return torch.sigmoid(self.forward(x))[0, 0].numpy().astype(np.float64)


def segment(image: np.ndarray, model: PresegModel) -> np.ndarray:
    prob = model.segment(image)
    if prob.shape != np.shape(image):
        raise ValueError(f"segmenter returned {prob.shape} for image {np.shape(image)}")
    return prob


@dataclass(frozen=True)
class DegradationSpec:
    target_dice: float
    tolerance: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.target_dice <= 1.0:
            raise ValueError("target_dice must lie in [0, 1]")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")


class DegradationError(RuntimeError):
    """Target Dice not reachable within the iteration budget."""


_FOUR = [(-1, 0), (1, 0), (0, -1), (0, 1)]
_EIGHT = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def _boundary_true(cur: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Foreground gt pixels of `cur` with a background 4-neighbor."""
    padded = np.pad(cur, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return np.argwhere(cur & gt & ~interior)

def _addable_false(cur: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Background non-gt pixels 8-adjacent to the current mask."""
    padded = np.pad(cur, 1, constant_values=False)
    near = np.zeros_like(cur)
    for dy, dx in _EIGHT:
        near |= padded[1 + dy : 1 + dy + cur.shape[0], 1 + dx : 1 + dx + cur.shape[1]]
    return np.argwhere(near & ~cur & ~gt)

def _addable_true(cur: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Removed gt pixels 8-adjacent to the current mask (for overshoot)."""
    padded = np.pad(cur, 1, constant_values=False)
    near = np.zeros_like(cur)
    for dy, dx in _EIGHT:
        near |= padded[1 + dy : 1 + dy + cur.shape[0], 1 + dx : 1 + dx + cur.shape[1]]
    return np.argwhere(near & ~cur & gt)

def _removable_false(cur: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return np.argwhere(cur & ~gt)


def _dice_counts(tp: int, pred: int, gt_n: int) -> float:
    return 2.0 * tp / (pred + gt_n) if pred + gt_n else 1.0


def degrade_to_dice(ground_truth: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Corrupt a binary mask to a requested Dice score against itself.

    Returns a {0, 1} map whose measured Dice is within spec.tolerance of
    spec.target_dice, built by random boundary erosion plus false-pixel
    growth near the boundary. Raises DegradationError when the target
    cannot be hit (e.g. very small masks at coarse Dice granularity).
    """
    gt = np.asarray(ground_truth) > 0.5
    n_fg = int(gt.sum())
    if spec.target_dice == 0.0:
        return np.zeros(gt.shape, dtype=np.float64)
    if n_fg == 0:
        raise ValueError("ground truth has no foreground and target_dice > 0")
    if spec.target_dice == 1.0:
        return gt.astype(np.float64)

    rng = Rng(spec.seed).child("degrade")
    cur = gt.copy()
    gt_n = n_fg
    # Opening move: erode a fraction of the true boundary, then grow the
    # false positives the target calls for; fine flips finish the job.
    k_remove = min(n_fg - 1, int(round(0.5 * n_fg * (1.0 - spec.target_dice))))
    for _ in range(k_remove):
        candidates = _boundary_true(cur, gt)
        if len(candidates) == 0:
            break
        y, x = candidates[rng.integers(0, len(candidates))]
        cur[y, x] = False

    budget = 8 * gt.size
    for _ in range(budget):
        tp = int((cur & gt).sum())
        pred = int(cur.sum())
        current = _dice_counts(tp, pred, gt_n)
        if abs(current - spec.target_dice) <= spec.tolerance:
            measured = dice(cur, gt)
            if abs(measured - spec.target_dice) <= spec.tolerance:
                return cur.astype(np.float64)
        if current > spec.target_dice:
            moves = [
                (_dice_counts(tp, pred + 1, gt_n), _addable_false(cur, gt), True),
            ]
            if pred > 1:  # never erode the mask away entirely
                moves.append((_dice_counts(tp - 1, pred - 1, gt_n), _boundary_true(cur, gt), False))
        else:
            moves = [
                (_dice_counts(tp + 1, pred + 1, gt_n), _addable_true(cur, gt), True),
                (_dice_counts(tp, pred - 1, gt_n), _removable_false(cur, gt), False),
            ]
        moves = [m for m in moves if len(m[1]) > 0]
        if not moves:
            break
        predicted, candidates, value = min(
            moves, key=lambda m: abs(m[0] - spec.target_dice)
        )
        y, x = candidates[rng.integers(0, len(candidates))]
        cur[y, x] = value
    raise DegradationError(
        f"could not reach Dice {spec.target_dice} +/- {spec.tolerance} "
        f"(mask has {n_fg} foreground pixels)"
    )
