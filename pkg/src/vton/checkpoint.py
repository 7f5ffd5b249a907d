"""Deterministic binary checkpoint container.

Layout: magic, 8-byte little-endian header length, a canonical JSON header
(stage tag, config hash, spec metadata, array directory), then the raw
little-endian float32 parameter data in directory order. No timestamps are
stored, so identical parameters produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointMismatchError

MAGIC = b"VTONCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    stage: str
    config_hash: str
    params: dict  # name -> np.ndarray float32
    meta: dict = field(default_factory=dict)

    def param_hash(self):
        return params_hash(self.params)

    def require_stage(self, stage):
        if self.stage != stage:
            raise CheckpointMismatchError(
                f"checkpoint mismatch: expected stage '{stage}', got '{self.stage}'"
            )
        return self


def params_hash(params):
    """Content hash over sorted parameter names and raw float32 bytes."""
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        h.update(name.encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()


def state_dict_to_params(module):
    return {k: v.detach().cpu().numpy().astype(np.float32) for k, v in module.state_dict().items()}


def load_params_into(module, params, prefix=""):
    """Load named arrays into a torch module, verifying the name inventory."""
    import torch

    state = module.state_dict()
    wanted = {prefix + k for k in state}
    have = set(params)
    missing = sorted(wanted - have)
    unexpected = sorted(have - wanted)
    if missing or unexpected:
        raise CheckpointMismatchError(
            f"checkpoint mismatch: missing={missing} unexpected={unexpected}"
        )
    module.load_state_dict(
        {k: torch.from_numpy(np.asarray(params[prefix + k])) for k in state}
    )
    return module


def save_checkpoint(path, ckpt: Checkpoint):
    names = sorted(ckpt.params)
    arrays = [np.ascontiguousarray(ckpt.params[n], dtype="<f4") for n in names]
    directory = [
        {"name": n, "shape": list(a.shape), "nbytes": a.nbytes}
        for n, a in zip(names, arrays)
    ]
    header = {
        "format_version": FORMAT_VERSION,
        "stage": ckpt.stage,
        "config_hash": ckpt.config_hash,
        "meta": ckpt.meta,
        "arrays": directory,
        "param_hash": params_hash(ckpt.params),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for a in arrays:
            f.write(a.tobytes())
    return path


def load_checkpoint(path):
    if not os.path.exists(path):
        raise CheckpointMismatchError(f"checkpoint mismatch: no checkpoint at {path}")
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointMismatchError(f"checkpoint mismatch: bad magic in {path}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        params = {}
        for entry in header["arrays"]:
            raw = f.read(entry["nbytes"])
            params[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
    ckpt = Checkpoint(
        stage=header["stage"],
        config_hash=header["config_hash"],
        params=params,
        meta=header.get("meta", {}),
    )
    if header.get("param_hash") and header["param_hash"] != ckpt.param_hash():
        raise CheckpointMismatchError(f"checkpoint mismatch: corrupted data in {path}")
    return ckpt
