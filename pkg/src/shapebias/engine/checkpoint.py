"""Parameter checkpoint container.

Layout: an unsigned little-endian 64-bit header length, a UTF-8 JSON header
(names, shapes, precision, engine version), then each tensor in header order
as a 64-bit byte length followed by raw little-endian array bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

ENGINE_VERSION = "0.1.0"

_PRECISION_TO_DTYPE = {"float32": "<f4", "float64": "<f8"}
_DTYPE_TO_PRECISION = {np.dtype("float32"): "float32", np.dtype("float64"): "float64"}


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name, arr in tensors.items():
        if arr.dtype not in _DTYPE_TO_PRECISION:
            raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        precision = _DTYPE_TO_PRECISION[arr.dtype]
        data = np.ascontiguousarray(arr, dtype=_PRECISION_TO_DTYPE[precision]).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "precision": precision})
        blobs.append(data)
    header = json.dumps(
        {"engine_version": ENGINE_VERSION, "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        tensors: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            (nbytes,) = struct.unpack("<Q", fh.read(8))
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise ValueError(f"truncated checkpoint at tensor {entry['name']!r}")
            arr = np.frombuffer(raw, dtype=_PRECISION_TO_DTYPE[entry["precision"]])
            tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors
