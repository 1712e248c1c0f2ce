"""Ensemble aggregation of sampled masks and pixel-wise uncertainty.

Several stochastic samples of the same case are averaged into one
probability map, thresholded (strictly above 0.5, ties to background) into
the final binary mask, and their per-pixel population variance becomes the
uncertainty map. Population variance keeps the exact bounds: 0 for
identical members, 0.25 at maximal disagreement of probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pgm


@dataclass(frozen=True)
class EnsembleResult:
    members: list[np.ndarray]
    mean_prob: np.ndarray
    binary: np.ndarray
    uncertainty: np.ndarray
    total_nfe: int


def ensemble(members: list[np.ndarray], nfes: list[int]) -> EnsembleResult:
    """Aggregate probability-space member masks; order-independent."""
    if len(members) == 0:
        raise ValueError("ensemble needs at least one member")
    if len(nfes) != len(members):
        raise ValueError("one nfe count per member required")
    stack = np.stack([np.asarray(m, dtype=np.float64) for m in members])
    if any(m.shape != stack.shape[1:] for m in members):
        raise ValueError("member dimensions differ")
    n = len(members)
    # Sum in sorted order so aggregation is exactly invariant to member
    # permutation (plain mean/var would differ in the last ulp).
    mean_prob = np.sort(stack, axis=0).sum(axis=0) / n
    uncertainty = np.sort((stack - mean_prob) ** 2, axis=0).sum(axis=0) / n
    return EnsembleResult(
        members=[stack[i] for i in range(n)],
        mean_prob=mean_prob,
        binary=(mean_prob > 0.5).astype(np.float64),
        uncertainty=uncertainty,
        total_nfe=int(sum(nfes)),
    )


def mean_uncertainty(result: EnsembleResult) -> float:
    return float(result.uncertainty.mean())


def write_result_maps(result: EnsembleResult, directory: str | Path, stem: str) -> list[Path]:
    """Export binary (8-bit), mean-probability and uncertainty (16-bit) PGMs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    binary = (result.binary > 0.5).astype(np.uint8) * 255
    paths.append(pgm.write_pgm(directory / f"{stem}_binary.pgm", binary, maxval=255))
    for name, grid in (("prob", result.mean_prob), ("uncertainty", result.uncertainty)):
        scaled = np.clip(np.round(grid * 65535.0), 0, 65535).astype(np.uint16)
        paths.append(pgm.write_pgm(directory / f"{stem}_{name}.pgm", scaled, maxval=65535))
    return paths
