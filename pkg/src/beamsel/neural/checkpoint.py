"""Versioned binary model checkpoints.

Layout: 8-byte magic "BSELNN01", uint32 little-endian header length, UTF-8
JSON header {arch, config, tensors: [{name, shape}, ...]}, then the parameter
tensors as a contiguous little-endian float64 stream in header order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"BSELNN01"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str, arch: str, config: dict, params: dict) -> None:
    names = sorted(params)
    header = {
        "arch": arch,
        "config": config,
        "tensors": [{"name": n, "shape": list(params[n].data.shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[str, dict, dict]:
    """Returns (arch tag, config dict, {name: float64 array})."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise CheckpointError(f"bad magic in {path}: {magic!r}")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode("utf-8"))
        tensors = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"truncated tensor {spec['name']} in {path}")
            tensors[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError(f"trailing bytes in {path}")
    return header["arch"], header["config"], tensors


def restore_params(model, tensors: dict) -> None:
    """Copy checkpoint tensors into a model, validating the shape manifest."""
    expected = set(model.params)
    if expected != set(tensors):
        missing = expected - set(tensors)
        extra = set(tensors) - expected
        raise CheckpointError(f"tensor names mismatch: missing {missing}, extra {extra}")
    for name, tensor in model.params.items():
        if tensors[name].shape != tensor.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {tensors[name].shape} "
                f"vs model {tensor.data.shape}"
            )
        tensor.data = tensors[name].copy()
