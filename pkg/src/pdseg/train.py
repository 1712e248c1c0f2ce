"""Training loops for the denoiser and the pre-segmentation net.

Both trainers draw every random choice (init seed, batch order, step
indices, noise) from an explicit `Rng` stream, track a validation score on
a draw fixed up front, and return the best-validation parameters plus a
per-epoch history suitable for a loss-curve CSV. Optimization is Adam with
the weight decay / learning rate defaults used throughout.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from .denoiser import ConvDenoiser, ConvDenoiserConfig
from .metrics import dice
from .preseg import PresegConfig, PresegNet
from .rng import Rng
from .schedule import NoiseSchedule
from .synth import Case


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 240
    batch_size: int = 16
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


def denoising_loss(
    model: torch.nn.Module,
    x0: torch.Tensor,
    image: torch.Tensor,
    t: torch.Tensor,
    noise: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Batched noise-matching MSE, differentiable w.r.t. model parameters.

    x0/image/noise are (B, 1, H, W), t is a (B,) LongTensor of step indices
    in 1..T. Keeps the graph, so it serves both the optimizer and gradient
    checks.
    """
    ab = torch.from_numpy(schedule.alpha_bars.copy()).to(x0.dtype)[t][:, None, None, None]
    x_t = ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise
    eps_hat = model(torch.cat([x_t, image], dim=1), t)
    return ((noise - eps_hat) ** 2).mean()


def _image_tensor(cases: list[Case]) -> torch.Tensor:
    return torch.from_numpy(np.stack([c.image for c in cases])[:, None].astype(np.float32))


def _mask_tensor(cases: list[Case]) -> torch.Tensor:
    return torch.from_numpy(np.stack([c.gt for c in cases])[:, None].astype(np.float32))


def train_denoiser(
    train_cases: list[Case],
    val_cases: list[Case],
    schedule: NoiseSchedule,
    model_config: ConvDenoiserConfig = ConvDenoiserConfig(),
    config: TrainConfig = TrainConfig(),
) -> tuple[ConvDenoiser, list[dict]]:
    if not train_cases or not val_cases:
        raise ValueError("need non-empty train and val case lists")
    rng = Rng(config.seed).child("train-denoiser")
    torch.manual_seed(rng.child("init").key & 0x7FFFFFFFFFFFFFFF)
    model = ConvDenoiser(model_config)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    images = _image_tensor(train_cases)
    targets = 2.0 * _mask_tensor(train_cases) - 1.0  # {0,1} -> {-1,+1}
    val_images = _image_tensor(val_cases)
    val_targets = 2.0 * _mask_tensor(val_cases) - 1.0
    total = schedule.total_steps

    val_rng = rng.child("val")
    val_t = torch.from_numpy(val_rng.integers(1, total + 1, size=len(val_cases)))
    val_noise = torch.from_numpy(
        val_rng.standard_normal(val_targets.shape).astype(np.float32)
    )

    n = len(train_cases)
    history: list[dict] = []
    best_state, best_val = None, float("inf")
    for epoch in range(config.epochs):
        order = rng.child("perm", epoch).permutation(n)
        batch_rng = rng.child("batch", epoch)
        epoch_losses = []
        model.train()
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size].copy())
            t = torch.from_numpy(batch_rng.integers(1, total + 1, size=len(idx)))
            noise = torch.from_numpy(
                batch_rng.standard_normal((len(idx),) + tuple(targets.shape[1:])).astype(np.float32)
            )
            loss = denoising_loss(model, targets[idx], images[idx], t, noise, schedule)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        model.eval()
        with torch.no_grad():
            val_loss = float(denoising_loss(model, val_targets, val_images, val_t, val_noise, schedule))
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)), "val_loss": val_loss}
        )
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def train_preseg(
    train_cases: list[Case],
    val_cases: list[Case],
    model_config: PresegConfig = PresegConfig(),
    config: TrainConfig = TrainConfig(),
) -> tuple[PresegNet, list[dict]]:
    if not train_cases or not val_cases:
        raise ValueError("need non-empty train and val case lists")
    rng = Rng(config.seed).child("train-preseg")
    torch.manual_seed(rng.child("init").key & 0x7FFFFFFFFFFFFFFF)
    model = PresegNet(model_config)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    bce = torch.nn.BCEWithLogitsLoss()
    images = _image_tensor(train_cases)
    masks = _mask_tensor(train_cases)

    n = len(train_cases)
    history: list[dict] = []
    best_state, best_dice = None, -1.0
    for epoch in range(config.epochs):
        order = rng.child("perm", epoch).permutation(n)
        epoch_losses = []
        model.train()
        for start in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size].copy())
            loss = bce(model(images[idx]), masks[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        model.eval()
        val_dice = float(
            np.mean([dice(model.segment(c.image) > 0.5, c.gt) for c in val_cases])
        )
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)), "val_dice": val_dice}
        )
        if val_dice > best_dice:
            best_dice = val_dice
            best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return model, history
