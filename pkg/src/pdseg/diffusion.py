"""Forward diffusion kernels and the two reverse samplers.

Grids are plain float64 arrays. Masks live in [-1, +1] "diffusion space"
while a chain runs: binary ground truth is encoded {0,1} -> {-1,+1} and a
finished sample is decoded back to a probability map with an affine map
plus clamp. Step indices are 1-based (t = 1..T); see `schedule`.

Two ways to produce a mask sample:

* `vanilla_sample` draws pure Gaussian noise at step T and runs the full
  T-step learned reverse chain.
* `pd_sample` forward-diffuses a pre-segmentation probability map to an
  intermediate step t' and runs only the last t' reverse steps, cutting the
  denoiser evaluations per sample from T to t'.

Both samplers count denoiser evaluations (NFE) exactly: one per reverse
step, nothing hidden. All randomness comes from the caller's `Rng` stream,
so runs are reproducible and ensemble members can be drawn concurrently
from child streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng import Rng
from .schedule import NoiseSchedule

SIGMA_RULES = ("beta", "beta_tilde")


@dataclass(frozen=True)
class SamplerConfig:
    """Reverse-chain options shared by both samplers.

    sigma_rule picks the per-step variance: "beta" uses beta_t, the default
    "beta_tilde" uses beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
    Either way the final step (t = 1) is deterministic.
    """

    sigma_rule: str = "beta_tilde"

    def __post_init__(self):
        if self.sigma_rule not in SIGMA_RULES:
            raise ValueError(f"sigma_rule must be one of {SIGMA_RULES}, got {self.sigma_rule!r}")


@dataclass(frozen=True)
class ReverseStepParams:
    """Mean and variance of one reverse transition at step t."""

    mean: np.ndarray
    variance: float
    t: int


def encode_probability(prob: np.ndarray) -> np.ndarray:
    """Map a probability grid [0, 1] to diffusion space [-1, +1]."""
    return 2.0 * np.asarray(prob, dtype=np.float64) - 1.0


def decode_to_probability(x0: np.ndarray) -> np.ndarray:
    """Map a diffusion-space grid back to [0, 1], clamping overshoot."""
    return np.clip((np.asarray(x0, dtype=np.float64) + 1.0) / 2.0, 0.0, 1.0)


def _check_pair(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def q_sample(x0: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """Closed-form forward marginal: sqrt(ab_t) x0 + sqrt(1 - ab_t) noise."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    _check_pair(x0, noise, "q_sample")
    if t < 1:
        raise ValueError(f"q_sample needs 1 <= t <= T, got {t}")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


def q_step(x_prev: np.ndarray, t: int, schedule: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """Single forward transition: sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) noise."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    _check_pair(x_prev, noise, "q_step")
    beta = schedule.beta(t)
    return math.sqrt(1.0 - beta) * x_prev + math.sqrt(beta) * noise


def reverse_step_params(
    x_t: np.ndarray,
    eps_hat: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    sigma_rule: str = "beta_tilde",
) -> ReverseStepParams:
    """Mean/variance of the learned reverse transition at step t.

    The mean follows the noise-prediction parameterization
    mu = (x_t - beta_t / sqrt(1 - ab_t) * eps_hat) / sqrt(alpha_t); the
    variance is beta_t or beta_tilde_t per `sigma_rule` and is forced to 0
    at t = 1 so the terminal mean decodes deterministically.
    """
    if sigma_rule not in SIGMA_RULES:
        raise ValueError(f"sigma_rule must be one of {SIGMA_RULES}, got {sigma_rule!r}")
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    _check_pair(x_t, eps_hat, "reverse_step_params")
    beta = schedule.beta(t)
    alpha = schedule.alpha(t)
    ab_t = schedule.alpha_bar(t)
    mean = (x_t - (beta / math.sqrt(1.0 - ab_t)) * eps_hat) / math.sqrt(alpha)
    if t == 1:
        variance = 0.0
    elif sigma_rule == "beta":
        variance = beta
    else:
        variance = beta * (1.0 - schedule.alpha_bar(t - 1)) / (1.0 - ab_t)
    return ReverseStepParams(mean=mean, variance=variance, t=t)


def _run_reverse(
    x: np.ndarray,
    image: np.ndarray,
    denoiser,
    schedule: NoiseSchedule,
    t_start: int,
    draw_noise: Callable[[], np.ndarray],
    sigma_rule: str,
) -> np.ndarray:
    for t in range(t_start, 0, -1):
        eps_hat = denoiser.predict(x, image, t)
        params = reverse_step_params(x, eps_hat, t, schedule, sigma_rule)
        if params.variance > 0.0:
            x = params.mean + math.sqrt(params.variance) * draw_noise()
        else:
            x = params.mean
    return x


def reverse_chain(
    x_start: np.ndarray,
    image: np.ndarray,
    denoiser,
    schedule: NoiseSchedule,
    t_start: int,
    rng: Rng,
    config: SamplerConfig = SamplerConfig(),
) -> tuple[np.ndarray, int]:
    """Run the reverse chain from a given state at step t_start down to 0.

    This is the shared core of both samplers; it is exposed so the chain
    can be verified from arbitrary (possibly non-Gaussian) start states.
    `x_start` may carry leading batch dimensions over the (H, W) grid, in
    which case the batch entries evolve as independent chains. Returns
    (x0, nfe) with nfe == t_start, counted per chain.
    """
    if not 0 <= t_start <= schedule.total_steps:
        raise ValueError(f"t_start {t_start} outside 0..{schedule.total_steps}")
    x = np.asarray(x_start, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    if x.shape[-2:] != image.shape:
        raise ValueError(f"reverse_chain: state {x.shape} does not match image {image.shape}")
    x = _run_reverse(x, image, denoiser, schedule, t_start,
                     lambda: rng.standard_normal(x.shape), config.sigma_rule)
    return x, t_start


def vanilla_sample(
    image: np.ndarray,
    denoiser,
    schedule: NoiseSchedule,
    rng: Rng,
    config: SamplerConfig = SamplerConfig(),
) -> tuple[np.ndarray, int]:
    """Sample a mask from pure noise with the full T-step reverse chain.

    Returns (x0 in diffusion space, nfe); nfe always equals T.
    """
    image = np.asarray(image, dtype=np.float64)
    x_t = rng.standard_normal(image.shape)
    return reverse_chain(x_t, image, denoiser, schedule, schedule.total_steps, rng, config)


def pd_sample(
    image: np.ndarray,
    preseg_prob: np.ndarray,
    denoiser,
    schedule: NoiseSchedule,
    t_prime: int,
    rng: Rng,
    config: SamplerConfig = SamplerConfig(),
) -> tuple[np.ndarray, int]:
    """Sample a mask starting from a forward-diffused pre-segmentation.

    The pre-segmentation probability map is encoded to diffusion space,
    diffused to step t' with the closed-form forward kernel, and the last
    t' reverse steps are run from there. nfe == t'; t' = 0 returns the
    encoded pre-segmentation untouched with nfe = 0.
    """
    image = np.asarray(image, dtype=np.float64)
    preseg_prob = np.asarray(preseg_prob, dtype=np.float64)
    _check_pair(image, preseg_prob, "pd_sample")
    if not 0 <= t_prime <= schedule.total_steps:
        raise ValueError(f"t_prime {t_prime} outside 0..{schedule.total_steps}")
    if preseg_prob.min() < 0.0 or preseg_prob.max() > 1.0:
        raise ValueError("pre-segmentation values must lie in [0, 1]")
    x = encode_probability(preseg_prob)
    if t_prime == 0:
        return x, 0
    x = q_sample(x, t_prime, schedule, rng.standard_normal(x.shape))
    return reverse_chain(x, image, denoiser, schedule, t_prime, rng, config)


def sample_ensemble_members(
    image: np.ndarray,
    denoiser,
    schedule: NoiseSchedule,
    rng: Rng,
    size: int,
    method: str = "vanilla",
    t_prime: int | None = None,
    preseg_prob: np.ndarray | None = None,
    config: SamplerConfig = SamplerConfig(),
) -> tuple[np.ndarray, list[int]]:
    """Draw `size` independent chains in lockstep as one (size, H, W) batch.

    Member i consumes exactly the stream rng.child("member", i), in the
    same draw order as a standalone `vanilla_sample` / `pd_sample` call, so
    any member can be reproduced individually. Batching only changes how
    the denoiser is invoked (one batched prediction per step instead of
    `size` single ones); per-member NFE is unchanged.

    Returns (stacked diffusion-space x0 grids, per-member nfe list).
    """
    if size < 1:
        raise ValueError("ensemble size must be >= 1")
    if method not in ("vanilla", "pd"):
        raise ValueError(f"unknown sampling method {method!r}")
    image = np.asarray(image, dtype=np.float64)
    streams = [rng.child("member", i) for i in range(size)]

    def stacked_noise() -> np.ndarray:
        return np.stack([s.standard_normal(image.shape) for s in streams])

    if method == "vanilla":
        t_start = schedule.total_steps
        x = stacked_noise()
    else:
        if t_prime is None or preseg_prob is None:
            raise ValueError("pd sampling needs t_prime and a pre-segmentation")
        preseg_prob = np.asarray(preseg_prob, dtype=np.float64)
        _check_pair(image, preseg_prob, "sample_ensemble_members")
        if not 0 <= t_prime <= schedule.total_steps:
            raise ValueError(f"t_prime {t_prime} outside 0..{schedule.total_steps}")
        if preseg_prob.min() < 0.0 or preseg_prob.max() > 1.0:
            raise ValueError("pre-segmentation values must lie in [0, 1]")
        t_start = t_prime
        x = np.stack([encode_probability(preseg_prob)] * size)
        if t_start == 0:
            return x, [0] * size
        x = q_sample(x, t_start, schedule, stacked_noise())

    x = _run_reverse(x, image, denoiser, schedule, t_start, stacked_noise, config.sigma_rule)
    return x, [t_start] * size
