"""Checkpoint files.

Layout::

    REPLAYNET-CKPT <version>\\n
    <one-line JSON header>\\n
    <raw little-endian float64 payload>

The header holds the seed, free-form metadata and, per tensor, its name,
shape and byte offset into the payload. Writing is byte-deterministic: no
timestamps, sorted JSON keys, tensors in store order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .numerics import ParameterStore

MAGIC = b"REPLAYNET-CKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ParameterStore, seed: int, meta: dict | None = None,
                    include_moments: bool = True):
    entries = []
    blobs = []
    offset = 0
    for name, p in params.items():
        arrays = [("value", p.value)]
        if include_moments:
            arrays += [("m", p.m), ("v", p.v)]
        for kind, arr in arrays:
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            entries.append({"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset})
            blobs.append(data)
            offset += len(data)
    header = {"seed": int(seed), "meta": meta or {}, "tensors": entries}
    text = json.dumps(header, sort_keys=True, separators=(",", ":"))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" " + str(FORMAT_VERSION).encode() + b"\n")
        fh.write(text.encode() + b"\n")
        for b in blobs:
            fh.write(b)


def read_checkpoint(path):
    """Return ``(seed, meta, tensors)`` where tensors maps name -> {kind: array}."""
    raw = Path(path).read_bytes()
    first, _, rest = raw.partition(b"\n")
    parts = first.split(b" ")
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError(f"{path}: not a replaynet checkpoint")
    version = int(parts[1])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    head, _, payload = rest.partition(b"\n")
    header = json.loads(head)
    tensors: dict[str, dict[str, np.ndarray]] = {}
    for e in header["tensors"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = e["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=start).astype(np.float64).reshape(shape)
        tensors.setdefault(e["name"], {})[e["kind"]] = arr
    return header["seed"], header["meta"], tensors


def load_into(params: ParameterStore, tensors, strict: bool = True):
    """Copy checkpoint tensors into ``params`` after checking names and shapes."""
    for name, p in params.items():
        if name not in tensors:
            if strict:
                raise CheckpointError(f"checkpoint has no tensor {name!r}")
            continue
        stored = tensors[name]
        if stored["value"].shape != p.value.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {stored['value'].shape} in checkpoint, "
                f"expected {p.value.shape}"
            )
        p.value[...] = stored["value"]
        if "m" in stored:
            p.m[...] = stored["m"]
            p.v[...] = stored["v"]
        p.zero_grad()
    if strict:
        extra = set(tensors) - set(params)
        if extra:
            raise CheckpointError(f"checkpoint has unexpected tensors {sorted(extra)}")
