"""Self-describing binary checkpoint container ("PDSEG1").

Layout, all little-endian:

    magic        6 bytes  b"PDSEG1"
    version      u8       currently 1
    kind         u16 length + utf-8 ("denoiser" or "preseg")
    config       u32 count, then per entry: u16 name length + utf-8, i64
    schedule     u8 flag; if 1: u16 kind length + utf-8, u32 T, T x f64 betas
    tensors      u32 count, then per tensor:
                 u16 name length + utf-8, u8 rank, rank x u32 dims, f32 data

Parameters are stored exactly as trained (float32), so a save/load round
trip is bit-exact. Denoiser checkpoints embed the noise schedule they were
trained with; sampling must reuse it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .denoiser import ConvDenoiser, ConvDenoiserConfig
from .preseg import PresegConfig, PresegNet
from .schedule import NoiseSchedule

MAGIC = b"PDSEG1"
VERSION = 1


class CheckpointError(RuntimeError):
    """Unreadable or malformed checkpoint; message names the file."""


@dataclass(frozen=True)
class Checkpoint:
    kind: str
    config: dict[str, int]
    tensors: dict[str, np.ndarray]
    schedule: NoiseSchedule | None


def _pack_str(value: str) -> bytes:
    raw = value.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data, self.path, self.pos = data, path, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def save_checkpoint(
    path: str | Path,
    kind: str,
    config: dict[str, int],
    tensors: dict[str, np.ndarray],
    schedule: NoiseSchedule | None = None,
) -> Path:
    path = Path(path)
    parts = [MAGIC, struct.pack("<B", VERSION), _pack_str(kind), struct.pack("<I", len(config))]
    for name, value in config.items():
        parts.append(_pack_str(name) + struct.pack("<q", int(value)))
    if schedule is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1) + _pack_str(schedule.kind))
        parts.append(struct.pack("<I", schedule.total_steps))
        parts.append(schedule.betas.astype("<f8").tobytes())
    parts.append(struct.pack("<I", len(tensors)))
    for name, tensor in tensors.items():
        tensor = np.asarray(tensor, dtype=np.float32)  # tobytes() is C-order for any layout
        parts.append(_pack_str(name) + struct.pack("<B", tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(tensor.astype("<f4").tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a PDSEG1 checkpoint")
    (version,) = r.unpack("<B")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    kind = r.string()
    (n_config,) = r.unpack("<I")
    config = {}
    for _ in range(n_config):
        name = r.string()
        (config[name],) = r.unpack("<q")
    (has_schedule,) = r.unpack("<B")
    schedule = None
    if has_schedule:
        schedule_kind = r.string()
        (total,) = r.unpack("<I")
        betas = np.frombuffer(r.take(8 * total), dtype="<f8").astype(np.float64)
        schedule = NoiseSchedule.from_betas(schedule_kind, betas)
    (n_tensors,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_tensors):
        name = r.string()
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes")
    return Checkpoint(kind=kind, config=config, tensors=tensors, schedule=schedule)


def _state_tensors(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {name: value.detach().cpu().numpy() for name, value in model.state_dict().items()}


def _load_state(model: torch.nn.Module, tensors: dict[str, np.ndarray], path: Path) -> None:
    state = {name: torch.from_numpy(value.copy()) for name, value in tensors.items()}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameter mismatch: {exc}") from exc


def save_denoiser(path: str | Path, model: ConvDenoiser, schedule: NoiseSchedule) -> Path:
    return save_checkpoint(path, "denoiser", model.config.as_int_dict(), _state_tensors(model), schedule)


def load_denoiser(path: str | Path) -> tuple[ConvDenoiser, NoiseSchedule]:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "denoiser":
        raise CheckpointError(f"{path}: expected a denoiser checkpoint, found {ckpt.kind!r}")
    if ckpt.schedule is None:
        raise CheckpointError(f"{path}: denoiser checkpoint lacks its noise schedule")
    model = ConvDenoiser(ConvDenoiserConfig(**ckpt.config))
    _load_state(model, ckpt.tensors, Path(path))
    return model, ckpt.schedule


def save_preseg(path: str | Path, model: PresegNet) -> Path:
    return save_checkpoint(path, "preseg", model.config.as_int_dict(), _state_tensors(model))


def load_preseg(path: str | Path) -> PresegNet:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "preseg":
        raise CheckpointError(f"{path}: expected a preseg checkpoint, found {ckpt.kind!r}")
    model = PresegNet(PresegConfig(**ckpt.config))
    _load_state(model, ckpt.tensors, Path(path))
    return model
