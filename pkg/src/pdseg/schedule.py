"""Diffusion variance schedules.

A schedule fixes the per-step variances beta_t of the noising transitions
t = 1..T together with the derived alpha_t = 1 - beta_t and the cumulative
products alpha_bar_t = prod_{s<=t} alpha_s. ``alpha_bar`` is indexed 0..T
with alpha_bar_0 = 1, which makes the closed-form marginal at step t and
the final reverse step (t = 1) unambiguous.

Construction is a pure function of its arguments; the resulting tables are
frozen (read-only arrays) and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BETA_MAX = 0.999
COSINE_OFFSET = 0.008


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta/alpha/alpha_bar tables for a T-step chain.

    ``betas[i]`` is the variance of transition t = i + 1 (0-based storage,
    1-based step indices). ``alpha_bars`` has length T + 1 and is built by
    sequential product over the (clipped) betas, so
    ``alpha_bars[t] == alpha_bars[t - 1] * alphas[t - 1]`` holds exactly.
    """

    kind: str
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def total_steps(self) -> int:
        return len(self.betas)

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.total_steps:
            raise ValueError(f"step index {t} outside 1..{self.total_steps}")

    def beta(self, t: int) -> float:
        self._check_step(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_step(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.total_steps:
            raise ValueError(f"step index {t} outside 0..{self.total_steps}")
        return float(self.alpha_bars[t])

    @classmethod
    def from_betas(cls, kind: str, betas: np.ndarray) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ValueError("betas must be a non-empty 1-d sequence")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.empty(len(betas) + 1, dtype=np.float64)
        alpha_bars[0] = 1.0
        # multiply.accumulate is strictly sequential, so the product
        # invariant alpha_bars[t] == alpha_bars[t-1] * alphas[t-1] is exact.
        np.multiply.accumulate(alphas, out=alpha_bars[1:])
        for arr in (betas, alphas, alpha_bars):
            arr.setflags(write=False)
        return cls(kind=kind, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def build_cosine_schedule(total_steps: int) -> NoiseSchedule:
    """Cosine schedule: squared-cosine alpha_bar curve with offset 0.008.

    alpha_bar_t is targeted at f(t)/f(0) with
    f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2), s = 0.008; the implied betas
    are clipped at 0.999 and alpha_bar is then recomputed from the clipped
    betas so the product invariant stays exact (the clip only bites at the
    terminal step, where the raw beta reaches 1).
    """
    if total_steps < 2:
        raise ValueError("cosine schedule requires at least 2 steps")
    t = np.arange(total_steps + 1, dtype=np.float64)
    f = np.cos(((t / total_steps + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * (np.pi / 2.0)) ** 2
    target = f / f[0]
    betas = 1.0 - target[1:] / target[:-1]
    betas = np.minimum(betas, BETA_MAX)
    return NoiseSchedule.from_betas("cosine", betas)


def build_linear_schedule(total_steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Betas linearly interpolated from beta_start to beta_end inclusive."""
    if total_steps < 1:
        raise ValueError("linear schedule requires at least 1 step")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, total_steps)
    return NoiseSchedule.from_betas("linear", betas)
