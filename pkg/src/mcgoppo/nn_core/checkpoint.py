"""Flat binary container for named float64 tensors.

Layout, stable within a major release:

    line 1: magic  b"MCGK1\\n"
    line 2: UTF-8 JSON header + b"\\n", with sorted keys:
            {"meta": {...}, "tensors": [{"name", "shape", "offset"}, ...]}
    then:   concatenated little-endian float64 data, C order, in the
            header's tensor order (tensors sorted by name)

Offsets count float64 elements from the start of the data block.  Because
tensor order and JSON encoding are canonical, load -> save round-trips
byte-identically.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .layers import Parameter

MAGIC = b"MCGK1\n"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    path: str | Path,
    tensors: Mapping[str, np.ndarray],
    meta: Mapping | None = None,
) -> None:
    names = sorted(tensors)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        blobs.append(arr.tobytes())
    header = {"meta": dict(meta or {}), "tensors": entries}
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(payload)
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: missing checkpoint magic")
    body = raw[len(MAGIC):]
    newline = body.index(b"\n")
    header = json.loads(body[:newline].decode("utf-8"))
    data = np.frombuffer(body[newline + 1:], dtype="<f8")
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        tensors[entry["name"]] = data[start:start + size].reshape(shape).copy()
    return header["meta"], tensors


def save_params(path: str | Path, params: Sequence[Parameter], meta: Mapping | None = None) -> None:
    save_checkpoint(path, {p.name: p.value for p in params}, meta)


def load_params(path: str | Path, params: Sequence[Parameter]) -> dict:
    meta, tensors = load_checkpoint(path)
    by_name = {p.name: p for p in params}
    if set(by_name) != set(tensors):
        missing = sorted(set(by_name) - set(tensors))
        extra = sorted(set(tensors) - set(by_name))
        raise CheckpointError(
            f"{path}: parameter names mismatch (missing={missing}, unexpected={extra})"
        )
    for name, arr in tensors.items():
        p = by_name[name]
        if arr.shape != p.value.shape:
            raise CheckpointError(
                f"{path}: {name} has shape {arr.shape}, model expects {p.value.shape}"
            )
        p.value[...] = arr
    return meta
