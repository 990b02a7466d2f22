"""Binary model checkpoints.

Layout: magic `DAWM`, format-version u32, header-length u32, UTF-8 JSON
header (config, feature front-end, vocabulary), then named parameter
blocks: u32 name length, name bytes, u32 rank, u32 dims, little-endian f32
payload. Parameters are written in sorted name order so identical models
serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import nncore as nc
from .ctc import CharInventory
from .errors import IntegrityError, VersionError
from .features import CmvnStats, FeatureConfig
from .model import HybridModel, ModelConfig

MAGIC = b"DAWM"
FORMAT_VERSION = 1

_CMVN_MEAN = "cmvn.mean"
_CMVN_STD = "cmvn.std"


def _header_dict(model, feature_config):
    return {
        "model_config": model.config.to_dict(),
        "feature_config": feature_config.to_dict() if feature_config else None,
        "vocab_chars": list(model.vocab.chars),
    }


def save_checkpoint(model, path, feature_config=None):
    """Serialize at 32-bit parameter precision; returns the bytes written."""
    header = json.dumps(
        _header_dict(model, feature_config), ensure_ascii=False, sort_keys=True
    ).encode("utf-8")
    blocks = {name: t.data for name, t in model.params.items()}
    if model.cmvn is not None:
        blocks[_CMVN_MEAN] = model.cmvn.mean
        blocks[_CMVN_STD] = model.cmvn.stddev

    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", FORMAT_VERSION, len(header))
    out += header
    for name in sorted(blocks):
        arr = np.asarray(blocks[name], dtype="<f4")
        name_b = name.encode("utf-8")
        out += struct.pack("<I", len(name_b))
        out += name_b
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    data = bytes(out)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def load_checkpoint_bytes(data):
    """Parse checkpoint bytes into a ready HybridModel."""
    view = memoryview(data)
    if len(view) < 12 or bytes(view[:4]) != MAGIC:
        raise IntegrityError("not a checkpoint: bad magic bytes")
    version, header_len = struct.unpack("<II", view[4:12])
    if version != FORMAT_VERSION:
        raise VersionError(version, FORMAT_VERSION)
    offset = 12
    if offset + header_len > len(view):
        raise IntegrityError("truncated checkpoint header")
    try:
        header = json.loads(bytes(view[offset : offset + header_len]))
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"corrupt checkpoint header: {exc}") from exc
    offset += header_len

    blocks = {}
    while offset < len(view):
        if offset + 4 > len(view):
            raise IntegrityError("truncated parameter block name length")
        (name_len,) = struct.unpack("<I", view[offset : offset + 4])
        offset += 4
        if offset + name_len + 4 > len(view):
            raise IntegrityError("truncated parameter block name")
        name = bytes(view[offset : offset + name_len]).decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack("<I", view[offset : offset + 4])
        offset += 4
        if offset + 4 * rank > len(view):
            raise IntegrityError(f"truncated dims for parameter {name}")
        dims = struct.unpack(f"<{rank}I", view[offset : offset + 4 * rank])
        offset += 4 * rank
        size = 4 * int(np.prod(dims)) if rank else 4
        if offset + size > len(view):
            raise IntegrityError(f"truncated payload for parameter {name}")
        arr = np.frombuffer(view[offset : offset + size], dtype="<f4")
        blocks[name] = arr.astype(np.float64).reshape(dims)
        offset += size

    config = ModelConfig(**header["model_config"])
    vocab = CharInventory(tuple(header["vocab_chars"]))
    cmvn = None
    if _CMVN_MEAN in blocks:
        cmvn = CmvnStats(
            mean=blocks.pop(_CMVN_MEAN), stddev=blocks.pop(_CMVN_STD)
        )
    params = {
        name: nc.Tensor(arr, requires_grad=True) for name, arr in blocks.items()
    }
    model = HybridModel(config, vocab, params, cmvn=cmvn)
    feature_config = None
    if header.get("feature_config"):
        fc = dict(header["feature_config"])
        feature_config = FeatureConfig(**fc)
    return model, feature_config


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return load_checkpoint_bytes(fh.read())
