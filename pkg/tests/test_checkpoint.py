import numpy as np
import pytest
import torch

from pdseg.checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_denoiser,
    load_preseg,
    save_checkpoint,
    save_denoiser,
    save_preseg,
)
from pdseg.denoiser import ConvDenoiser, ConvDenoiserConfig
from pdseg.preseg import PresegConfig, PresegNet
from pdseg.rng import Rng
from pdseg.schedule import build_cosine_schedule, build_linear_schedule


def test_container_round_trip_bit_exact(tmp_path):
    tensors = {
        "w": np.arange(12, dtype=np.float32).reshape(3, 4),
        "b": np.array([1.5, -2.25], dtype=np.float32),
        "scalarish": np.array(7.0, dtype=np.float32).reshape(()),
    }
    schedule = build_linear_schedule(5, 0.01, 0.2)
    path = save_checkpoint(tmp_path / "x.ckpt", "denoiser", {"a": 3, "b": -1}, tensors, schedule)
    ckpt = load_checkpoint(path)
    assert ckpt.kind == "denoiser"
    assert ckpt.config == {"a": 3, "b": -1}
    for name, value in tensors.items():
        assert ckpt.tensors[name].dtype == np.float32
        assert np.array_equal(ckpt.tensors[name], value)
        assert ckpt.tensors[name].tobytes() == value.tobytes()
    assert ckpt.schedule.kind == "linear"
    assert np.array_equal(ckpt.schedule.betas, schedule.betas)
    assert np.array_equal(ckpt.schedule.alpha_bars, schedule.alpha_bars)


def test_denoiser_round_trip_preserves_predictions(tmp_path):
    torch.manual_seed(0)
    config = ConvDenoiserConfig(base_channels=8, depth=2)
    model = ConvDenoiser(config)
    with torch.no_grad():  # non-zero head so the prediction is non-trivial
        model.head.weight.add_(torch.randn_like(model.head.weight))
    schedule = build_cosine_schedule(20)
    path = save_denoiser(tmp_path / "d.ckpt", model, schedule)
    loaded, loaded_schedule = load_denoiser(path)
    assert loaded.config == config
    assert np.array_equal(loaded_schedule.betas, schedule.betas)
    for name, tensor in model.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], tensor)
    x = Rng(1).standard_normal((16, 16))
    image = Rng(2).uniform((16, 16))
    assert np.array_equal(model.predict(x, image, 7), loaded.predict(x, image, 7))


def test_preseg_round_trip(tmp_path):
    torch.manual_seed(1)
    model = PresegNet(PresegConfig(base_channels=8))
    path = save_preseg(tmp_path / "p.ckpt", model)
    loaded = load_preseg(path)
    image = Rng(3).uniform((16, 16))
    assert np.array_equal(model.segment(image), loaded.segment(image))


def test_kind_mismatch(tmp_path):
    model = PresegNet(PresegConfig(base_channels=8))
    path = save_preseg(tmp_path / "p.ckpt", model)
    with pytest.raises(CheckpointError, match="denoiser"):
        load_denoiser(path)
    torch.manual_seed(0)
    d = ConvDenoiser(ConvDenoiserConfig(base_channels=8))
    dpath = save_denoiser(tmp_path / "d.ckpt", d, build_cosine_schedule(4))
    with pytest.raises(CheckpointError, match="preseg"):
        load_preseg(dpath)


def test_corrupt_files_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTPDSEG-whatever")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    model = PresegNet(PresegConfig(base_channels=8))
    good = save_preseg(tmp_path / "p.ckpt", model)
    data = good.read_bytes()
    truncated = tmp_path / "trunc.ckpt"
    truncated.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(truncated)
    padded = tmp_path / "padded.ckpt"
    padded.write_bytes(data + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(padded)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="nope"):
        load_checkpoint(tmp_path / "nope.ckpt")
