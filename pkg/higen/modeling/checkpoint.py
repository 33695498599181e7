"""
Versioned binary checkpoint.

Layout (little-endian)::

    b"HIGENCKP" | u32 version | u32 len | config JSON
    | u32 n | n x (u16 len | name | u8 ndim | ndim x u32 | float32 data)
    | u32 crc32 of everything before it
"""

from __future__ import annotations

import io
import json
import logging
import struct
import zlib
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
import torch

from higen.config import ModelConfig
from higen.modeling.seq2seq import HiGenSeq2Seq

logger = logging.getLogger(__name__)

MAGIC = b"HIGENCKP"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    pass


def config_echo(model: HiGenSeq2Seq, **extra: Any) -> Dict[str, Any]:
    return {
        "model": model.cfg.model_dump(),
        "pad_id": model.pad_id,
        "bos_id": model.bos_id,
        "eos_id": model.eos_id,
        **extra,
    }


def encode_checkpoint(state: "OrderedDict[str, torch.Tensor]", config: Dict[str, Any]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        raw = name.encode("utf-8")
        arr = tensor.detach().cpu().numpy().astype("<f4", copy=False)
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(data: bytes) -> Tuple["OrderedDict[str, torch.Tensor]", Dict[str, Any]]:
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CorruptFile("not a checkpoint file (bad magic or header)")
    (version,) = struct.unpack_from("<I", data, len(MAGIC))
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads version {VERSION}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptFile("checksum mismatch (truncated or modified file)")

    try:
        pos = len(MAGIC) + 4
        (n_blob,) = struct.unpack_from("<I", body, pos)
        pos += 4
        config = json.loads(body[pos : pos + n_blob].decode("utf-8"))
        pos += n_blob
        (n_tensors,) = struct.unpack_from("<I", body, pos)
        pos += 4
        state: "OrderedDict[str, torch.Tensor]" = OrderedDict()
        for _ in range(n_tensors):
            (n_name,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + n_name].decode("utf-8")
            pos += n_name
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
            state[name] = torch.from_numpy(arr.astype(np.float32))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"malformed checkpoint body: {exc}") from exc
    if pos != len(body):
        raise CorruptFile(f"{len(body) - pos} trailing bytes after the last tensor")
    return state, config


def save_checkpoint(model: HiGenSeq2Seq, path: str | Path, **extra: Any) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(encode_checkpoint(model.state_dict(), config_echo(model, **extra)))
    logger.debug("checkpoint written to %s", p)


def load_checkpoint(path: str | Path) -> Tuple["OrderedDict[str, torch.Tensor]", Dict[str, Any]]:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint {p} does not exist")
    return decode_checkpoint(p.read_bytes())


def model_from_checkpoint(path: str | Path) -> Tuple[HiGenSeq2Seq, Dict[str, Any]]:
    state, config = load_checkpoint(path)
    model = HiGenSeq2Seq(
        ModelConfig.model_validate(config["model"]),
        pad_id=config["pad_id"], bos_id=config["bos_id"], eos_id=config["eos_id"],
    )
    model.load_state_dict(state)
    return model, config
