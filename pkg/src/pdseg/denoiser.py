"""Noise-predicting denoisers: the trainable conv net and an analytic oracle.

A denoiser is anything with ``predict(x_t, image, t) -> eps_hat``: given a
noisy mask grid, the conditioning image and the step index, return the
estimated noise component. The samplers in `diffusion` only see this
interface, which is the seam that lets the closed-form Gaussian oracle
stand in for a trained network when verifying the chain math.

`ConvDenoiser` is a small encoder-decoder with skip connections; the
conditioning image is channel-concatenated to the noisy mask at the input
and the step index enters through a sinusoidal embedding projected into
each block. It is deliberately modest (default 32 base channels, two
resolution levels, no attention) -- enough for 32x32 synthetic lesions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .diffusion import q_sample
from .schedule import NoiseSchedule


class Denoiser(Protocol):
    def predict(self, x_t: np.ndarray, image: np.ndarray, t: int) -> np.ndarray:
        """Estimate the noise in x_t; output shape equals x_t's."""
        ...


@dataclass(frozen=True)
class ConvDenoiserConfig:
    base_channels: int = 32
    depth: int = 2
    time_embedding_dim: int = 64
    input_channels: int = 2  # noisy mask + conditioning image

    def __post_init__(self):
        for name in ("base_channels", "depth", "time_embedding_dim", "input_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.input_channels != 2:
            raise ValueError("denoiser input is the mask/image channel pair")

    def as_int_dict(self) -> dict[str, int]:
        return {
            "base_channels": self.base_channels,
            "depth": self.depth,
            "time_embedding_dim": self.time_embedding_dim,
            "input_channels": self.input_channels,
        }


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic sin/cos positional features of the (integer) step index."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / max(half - 1, 1)
    )
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class _Block(nn.Module):
    """conv-norm-silu x2 with the time embedding added after the first conv."""

    def __init__(self, in_ch: int, out_ch: int, time_dim: int | None):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.time_proj = nn.Linear(time_dim, out_ch) if time_dim else None

    def forward(self, x, temb=None):
        h = F.silu(self.norm1(self.conv1(x)))
        if self.time_proj is not None:
            h = h + self.time_proj(temb)[:, :, None, None]
        return F.silu(self.norm2(self.conv2(h)))


class ConvDenoiser(nn.Module):
    """Conditional noise predictor for (mask, image) pairs."""

    def __init__(self, config: ConvDenoiserConfig = ConvDenoiserConfig()):
        super().__init__()
        self.config = config
        tdim = config.time_embedding_dim
        self.time_mlp = nn.Sequential(nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim))
        widths = [config.base_channels * 2**i for i in range(config.depth + 1)]
        self.encoders = nn.ModuleList()
        in_ch = config.input_channels
        for w in widths:
            self.encoders.append(_Block(in_ch, w, tdim))
            in_ch = w
        self.pool = nn.MaxPool2d(2)
        self.decoders = nn.ModuleList()
        for skip_w, w in zip(reversed(widths[:-1]), reversed(widths[1:])):
            self.decoders.append(_Block(w + skip_w, skip_w, tdim))
        self.head = nn.Conv2d(widths[0], 1, 1)
        # zero head: an untrained net predicts zero noise, so the first
        # training loss equals the noise second moment (~1).
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        temb = self.time_mlp(sinusoidal_embedding(t.to(x.dtype), self.config.time_embedding_dim))
        skips = []
        h = x
        for i, block in enumerate(self.encoders):
            if i > 0:
                h = self.pool(h)
            h = block(h, temb)
            skips.append(h)
        for block, skip in zip(self.decoders, reversed(skips[:-1])):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, skip], dim=1), temb)
        return self.head(h)

    @torch.no_grad()
    def predict(self, x_t: np.ndarray, image: np.ndarray, t: int) -> np.ndarray:
        """Numpy inference seam; accepts one grid (H, W) or a stack (M, H, W)."""
        x_t = np.asarray(x_t, dtype=np.float64)
        image = np.asarray(image, dtype=np.float64)
        if x_t.shape[-2:] != image.shape:
            raise ValueError(f"mask {x_t.shape} does not match image {image.shape}")
        side = 2 ** self.config.depth
        if x_t.shape[-2] % side or x_t.shape[-1] % side:
            raise ValueError(f"grid dimensions must be divisible by {side}")
        batched = x_t.ndim == 3
        stack = x_t if batched else x_t[None]
        n = stack.shape[0]
        xs = torch.from_numpy(stack[:, None].astype(np.float32))
        img = torch.from_numpy(image.astype(np.float32))[None, None].expand(n, -1, -1, -1)
        ts = torch.full((n,), t, dtype=torch.float32)
        out = self.forward(torch.cat([xs, img], dim=1), ts)
        eps = out[:, 0].numpy().astype(np.float64)
        return eps if batched else eps[0]


class GaussianOracleDenoiser:
    """Closed-form optimal noise predictor for N(mean, std^2 I) data.

    When the clean data are i.i.d. Gaussian per pixel, (x0, x_t) is jointly
    Gaussian, so the mean-squared-error-optimal noise estimate is available
    in closed form and the samplers can be verified exactly, with no
    training. The conditioning image is ignored (the target distribution is
    image-independent).
    """

    def __init__(self, target_mean: float, target_std: float, schedule: NoiseSchedule):
        if target_std <= 0.0:
            raise ValueError("target_std must be positive")
        self.target_mean = float(target_mean)
        self.target_std = float(target_std)
        self.schedule = schedule

    def posterior_mean_x0(self, x_t: np.ndarray, t: int) -> np.ndarray:
        """E[x0 | x_t]: shrink toward the target mean by the signal fraction."""
        ab = self.schedule.alpha_bar(t)
        var = self.target_std**2
        gain = math.sqrt(ab) * var / (ab * var + 1.0 - ab)
        return self.target_mean + gain * (np.asarray(x_t, dtype=np.float64) - math.sqrt(ab) * self.target_mean)

    def predict(self, x_t: np.ndarray, image: np.ndarray | None, t: int) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.float64)
        if image is not None and x_t.shape[-2:] != np.shape(image):
            raise ValueError(f"mask {x_t.shape} does not match image {np.shape(image)}")
        ab = self.schedule.alpha_bar(t)
        return (x_t - math.sqrt(ab) * self.posterior_mean_x0(x_t, t)) / math.sqrt(1.0 - ab)


def training_loss(
    x0: np.ndarray,
    image: np.ndarray,
    t: int,
    noise: np.ndarray,
    model: Denoiser,
    schedule: NoiseSchedule,
) -> float:
    """Noise-matching objective: MSE between the true and predicted noise."""
    x_t = q_sample(x0, t, schedule, noise)
    eps_hat = model.predict(x_t, image, t)
    return float(np.mean((np.asarray(noise, dtype=np.float64) - eps_hat) ** 2))
