"""Flat binary checkpoint container.

Layout (all integers little-endian u32)::

    b"CASC" | version | record*
    record = name_len | name (utf-8) | rank | extent*rank | float32 LE data
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from ..errors import ConfigError, StateError

MAGIC = b"CASC"
VERSION = 1


def save_checkpoint(path: str | Path, tensors: Mapping[str, torch.Tensor]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        arr = t.detach().cpu().to(torch.float32).contiguous().numpy()
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4").tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> dict[str, torch.Tensor]:
    path = Path(path)
    if not path.exists():
        raise StateError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:4] != MAGIC:
        raise ConfigError(f"{path}: not a CASC checkpoint")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    out: dict[str, torch.Tensor] = {}
    while pos < len(buf):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += 4 * count
        out[name] = torch.from_numpy(arr.astype(np.float32))
    return out


def save_module(path: str | Path, module: torch.nn.Module, prefix: str) -> Path:
    state = {f"{prefix}.{k}": v for k, v in module.state_dict().items()}
    return save_checkpoint(path, state)


def load_module(path: str | Path, module: torch.nn.Module, prefix: str) -> torch.nn.Module:
    """Load a prefixed checkpoint into ``module``; any name or shape mismatch is a config error."""
    tensors = load_checkpoint(path)
    head = prefix + "."
    state = {k[len(head):]: v for k, v in tensors.items() if k.startswith(head)}
    expected = module.state_dict()
    if set(state) != set(expected):
        missing = sorted(set(expected) - set(state))[:3]
        extra = sorted(set(state) - set(expected))[:3]
        raise ConfigError(f"{path}: checkpoint does not match model (missing {missing}, unexpected {extra})")
    for k, v in state.items():
        if tuple(v.shape) != tuple(expected[k].shape):
            raise ConfigError(
                f"{path}: {k} has shape {tuple(v.shape)}, model expects {tuple(expected[k].shape)}"
            )
    module.load_state_dict(state)
    return module


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
