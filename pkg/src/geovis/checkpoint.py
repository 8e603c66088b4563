"""Versioned checkpoint container.

``GVCKPT01`` magic, a little-endian uint64 index length, a JSON index
(config, config hash, seed, code version, and per-tensor name / shape /
byte offset), then the concatenated row-major little-endian float32
tensors.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import RunConfig
from .errors import ConfigError, DataError

MAGIC = b"GVCKPT01"
CONTAINER_VERSION = 1


def save_checkpoint(path, model: torch.nn.Module, cfg: RunConfig, extra: dict | None = None) -> None:
    tensors, blobs, offset = [], [], 0
    for name, value in model.state_dict().items():
        a = np.ascontiguousarray(value.detach().cpu().numpy(), dtype="<f4")
        blob = a.tobytes()
        tensors.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    index = {
        "container_version": CONTAINER_VERSION,
        "code_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": cfg.train.seed,
        "tensors": tensors,
        "extra": extra or {},
    }
    head = json.dumps(index, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path) -> tuple[dict, dict[str, torch.Tensor]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: bad header")
    (n,) = struct.unpack_from("<Q", raw, 8)
    index = json.loads(raw[16:16 + n])
    if index.get("container_version") != CONTAINER_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {index.get('container_version')}")
    base = 16 + n
    state = {}
    for t in index["tensors"]:
        start = base + t["offset"]
        if start + t["nbytes"] > len(raw):
            raise DataError(f"{path}: tensor {t['name']} truncated")
        a = np.frombuffer(raw, dtype="<f4", count=t["nbytes"] // 4, offset=start).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(a.astype(np.float32))
    return index, state


def load_checkpoint(path, expect_hash: str | None = None, force: bool = False):
    """Rebuild the model stored at ``path``; returns (model, config, index)."""
    from .model import GeoVisGNN

    index, state = read_checkpoint(path)
    cfg = RunConfig.from_dict(index["config"])
    if expect_hash is not None and expect_hash != index["config_hash"] and not force:
        raise ConfigError(f"checkpoint config hash {index['config_hash']} != requested {expect_hash} "
                          "(pass --force to override)")
    model = GeoVisGNN(cfg)
    model.load_state_dict(state)
    model.eval()
    return model, cfg, index
