"""Checkpoint files: a flat binary of named arrays plus a JSON manifest.

A checkpoint is a directory holding ``weights.bin`` and ``manifest.json``.
Each binary record is::

    u32 name_len | name (utf-8) | u8 dtype code | u32 ndim | u32 dims[ndim] | raw values

with every integer and value little-endian.  The manifest repeats the index
(name, dtype, shape, byte offset of the values) and carries free-form
metadata such as the resolved run configuration and seed.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_DTYPES = {1: "<f4", 2: "<f8"}
_CODES = {v: k for k, v in _DTYPES.items()}


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], metadata: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = []
    offset = 0
    with open(path / "weights.bin", "wb") as fh:
        for name in sorted(arrays):
            arr = np.asarray(arrays[name])
            code = _CODES[np.dtype(arr.dtype).newbyteorder("<").str]
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
            key = name.encode("utf-8")
            head = struct.pack("<I", len(key)) + key + struct.pack(f"<BI{arr.ndim}I", code, arr.ndim, *arr.shape)
            fh.write(head)
            fh.write(raw)
            index.append({"name": name, "dtype": _DTYPES[code], "shape": list(arr.shape),
                          "offset": offset + len(head), "nbytes": len(raw)})
            offset += len(head) + len(raw)
    manifest = {"format": "netmamba-ckpt/1", "tensors": index, "metadata": metadata or {}}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read arrays by walking the binary records; returns (arrays, metadata)."""
    path = Path(path)
    buf = (path / "weights.bin").read_bytes()
    manifest = json.loads((path / "manifest.json").read_text())
    arrays: dict[str, np.ndarray] = {}
    pos = 0
    while pos < len(buf):
        (n,) = struct.unpack_from("<I", buf, pos)
        name = buf[pos + 4:pos + 4 + n].decode("utf-8")
        pos += 4 + n
        code, ndim = struct.unpack_from("<BI", buf, pos)
        pos += 5
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dt = np.dtype(_DTYPES[code])
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(buf, dtype=dt, count=count, offset=pos).reshape(shape).astype(dt.newbyteorder("="))
        pos += count * dt.itemsize
    listed = {t["name"] for t in manifest.get("tensors", [])}
    if listed != set(arrays):
        raise ValueError(f"manifest and binary disagree in {path}")
    return arrays, manifest.get("metadata", {})
