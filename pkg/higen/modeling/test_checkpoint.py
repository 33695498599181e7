import struct

import pytest
import torch

from higen.config import ModelConfig
from higen.modeling.checkpoint import (
    MAGIC,
    CorruptFile,
    VersionMismatch,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from higen.modeling.seq2seq import build_model


@pytest.fixture
def model():
    torch.manual_seed(3)
    cfg = ModelConfig(d_model=16, n_heads=2, ffn=32, proj_hidden=16, proj_dim=8, max_len=24)
    return build_model(cfg, 20, 0, 1, 2)


def test_save_load_save_identical_bytes(tmp_path, model):
    first = tmp_path / "a.ckpt"
    save_checkpoint(model, first, stage="finetune")
    restored, config = model_from_checkpoint(first)
    assert config["stage"] == "finetune"
    for (name, a), (_, b) in zip(model.state_dict().items(), restored.state_dict().items()):
        assert torch.equal(a, b), name
    second = tmp_path / "b.ckpt"
    save_checkpoint(restored, second, stage="finetune")
    assert first.read_bytes() == second.read_bytes()


def test_truncated_file(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(CorruptFile):
        load_checkpoint(path)


def test_flipped_byte(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptFile):
        load_checkpoint(path)


def test_bumped_version(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    data = bytearray(path.read_bytes())
    data[len(MAGIC) : len(MAGIC) + 4] = struct.pack("<I", 2)
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(CorruptFile):
        load_checkpoint(path)
