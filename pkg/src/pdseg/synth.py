"""Synthetic lesion-segmentation corpus: generation and disk round-trip.

Each case is a noisy grayscale image with 1..4 elliptical "lesions" of
elevated intensity; the ground truth is the exact union of the rasterized
ellipse supports. Intensity overlap between lesion and background is tuned
so a plain global threshold cannot solve the task, leaving headroom for
learned methods to differ.

Images are quantized to 8 bits at generation time -- the quantization is
part of the data definition, so what is trained on and what is loaded back
from disk are identical bit for bit. On disk a corpus is
``images/*.pgm`` + ``masks/*.pgm`` + ``manifest.csv``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pgm
from .rng import Rng

SPLITS = ("train", "val", "test")


class CorpusError(RuntimeError):
    """Raised when a corpus cannot be generated, saved or loaded."""


@dataclass(frozen=True)
class CorpusConfig:
    num_cases: int = 200
    height: int = 32
    width: int = 32
    lesion_count: tuple[int, int] = (1, 4)
    lesion_radius: tuple[float, float] = (2.0, 6.0)
    background_mean: float = 0.35
    foreground_mean: float = 0.65
    noise_level: float = 0.12
    seed: int = 0

    def __post_init__(self):
        if self.num_cases < 1:
            raise ValueError("num_cases must be positive")
        if self.height < 16 or self.width < 16:
            raise ValueError("grid must be at least 16x16")
        lo, hi = self.lesion_count
        if not 1 <= lo <= hi:
            raise ValueError(f"bad lesion count range {self.lesion_count}")
        rlo, rhi = self.lesion_radius
        if not 0.5 <= rlo <= rhi:
            raise ValueError(f"bad lesion radius range {self.lesion_radius}")
        if 2 * rhi + 2 > min(self.height, self.width):
            raise ValueError("largest lesion does not fit the grid")
        if not 0.0 <= self.background_mean < self.foreground_mean <= 1.0:
            raise ValueError("need 0 <= background_mean < foreground_mean <= 1")
        if self.noise_level < 0.0:
            raise ValueError("noise_level must be nonnegative")


@dataclass(frozen=True)
class Case:
    case_id: str
    image: np.ndarray  # float64 in [0, 1], 8-bit quantized
    gt: np.ndarray  # float64 binary {0, 1}
    split: str
    seed: int


def _ellipse_support(height, width, cy, cx, a, b, theta) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    dy, dx = ys - cy, xs - cx
    u = (dx * math.cos(theta) + dy * math.sin(theta)) / a
    v = (-dx * math.sin(theta) + dy * math.cos(theta)) / b
    return u * u + v * v <= 1.0


def split_counts(n: int) -> tuple[int, int, int]:
    """60/20/20 split sizes, rounded, summing to n."""
    n_train = round(0.6 * n)
    n_val = round(0.2 * n)
    return n_train, n_val, n - n_train - n_val


def generate_corpus(config: CorpusConfig) -> list[Case]:
    master = Rng(config.seed)
    n_train, n_val, _ = split_counts(config.num_cases)
    cases = []
    for i in range(config.num_cases):
        rng = master.child("case", i)
        gt = np.zeros((config.height, config.width), dtype=bool)
        count = rng.integers(config.lesion_count[0], config.lesion_count[1] + 1)
        for _ in range(count):
            rlo, rhi = config.lesion_radius
            a = rlo + (rhi - rlo) * rng.uniform()
            b = rlo + (rhi - rlo) * rng.uniform()
            theta = math.pi * rng.uniform()
            margin = max(a, b)
            cy = margin + (config.height - 1 - 2 * margin) * rng.uniform()
            cx = margin + (config.width - 1 - 2 * margin) * rng.uniform()
            gt |= _ellipse_support(config.height, config.width, cy, cx, a, b, theta)
        base = np.where(gt, config.foreground_mean, config.background_mean)
        image = base + config.noise_level * rng.standard_normal(gt.shape)
        image = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        cases.append(
            Case(
                case_id=f"case_{i:04d}",
                image=image,
                gt=gt.astype(np.float64),
                split=split,
                seed=rng.key,
            )
        )
    return cases


def save_corpus(cases: list[Case], directory: str | Path) -> Path:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "split", "image_file", "mask_file", "seed"])
        for case in cases:
            image_file = f"images/{case.case_id}.pgm"
            mask_file = f"masks/{case.case_id}.pgm"
            pgm.write_pgm(
                directory / image_file,
                np.round(case.image * 255.0).astype(np.uint8),
                maxval=255,
            )
            pgm.write_pgm(
                directory / mask_file,
                (case.gt > 0.5).astype(np.uint8) * 255,
                maxval=255,
            )
            writer.writerow([case.case_id, case.split, image_file, mask_file, case.seed])
    return manifest


def load_corpus(directory: str | Path) -> list[Case]:
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.is_file():
        raise CorpusError(f"missing corpus manifest: {manifest}")
    cases = []
    with manifest.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        if row.get("split") not in SPLITS:
            raise CorpusError(f"{manifest}: bad split {row.get('split')!r} for {row.get('case_id')!r}")
        try:
            image_raw, _ = pgm.read_pgm(directory / row["image_file"])
            mask_raw, _ = pgm.read_pgm(directory / row["mask_file"])
        except pgm.PgmError as exc:
            raise CorpusError(str(exc)) from exc
        if image_raw.shape != mask_raw.shape:
            raise CorpusError(f"{directory / row['mask_file']}: shape differs from its image")
        if not np.isin(mask_raw, (0, 255)).all():
            raise CorpusError(f"{directory / row['mask_file']}: mask values must be 0 or 255")
        cases.append(
            Case(
                case_id=row["case_id"],
                image=image_raw.astype(np.float64) / 255.0,
                gt=(mask_raw == 255).astype(np.float64),
                split=row["split"],
                seed=int(row["seed"]),
            )
        )
    return cases


def threshold_baseline(cases: list[Case], thresholds: np.ndarray | None = None) -> tuple[float, float]:
    """Best single global intensity threshold and its mean Dice.

    The reference "dumb" baseline: if this were near 1.0 the task would be
    trivial and method comparisons meaningless.
    """
    from .metrics import dice

    if thresholds is None:
        thresholds = np.linspace(0.05, 0.95, 91)
    best_thr, best_dice = 0.5, -1.0
    for thr in thresholds:
        mean_dice = float(np.mean([dice(case.image >= thr, case.gt) for case in cases]))
        if mean_dice > best_dice:
            best_thr, best_dice = float(thr), mean_dice
    return best_thr, best_dice
