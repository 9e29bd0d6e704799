"""Versioned binary container for model checkpoints.

Layout, all integers little-endian::

    magic  b"DMCKPT\\0\\0"
    u32    format version
    u32    config length, then that many bytes of UTF-8 JSON
    u32    tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8  ndim, then ndim x u32 dims
        float32 little-endian data, row-major
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = b"DMCKPT\x00\x00"
VERSION = 1


def pack(config: dict, tensors: dict) -> bytes:
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def unpack(buf: bytes):
    if not buf.startswith(MAGIC):
        raise ConfigError("not a checkpoint file")
    off = len(MAGIC)
    version, n = struct.unpack_from("<II", buf, off)
    off += 8
    if version != VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    config = json.loads(buf[off : off + n].decode("utf-8"))
    off += n
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + n].decode("utf-8")
        off += n
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    return config, tensors


def save(path, config: dict, tensors: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pack(config, tensors))
    return path


def load(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return unpack(path.read_bytes())


def tensor_hash(tensors: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        h.update(name.encode("utf-8"))
        h.update(str(arr.shape).encode("ascii"))
        h.update(arr.tobytes())
    return h.hexdigest()


def state_to_numpy(module) -> dict:
    return {k: v.detach().cpu().numpy().astype(np.float32) for k, v in module.state_dict().items()}


def numpy_to_state(module, tensors: dict):
    import torch

    state = module.state_dict()
    missing = set(state) - set(tensors)
    if missing:
        raise ConfigError(f"checkpoint lacks tensors: {sorted(missing)[:3]}")
    module.load_state_dict({k: torch.from_numpy(np.array(tensors[k])).to(state[k].dtype) for k in state})
    return module
