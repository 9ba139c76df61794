"""Array container: named arrays plus a JSON metadata record in one safetensors file.

Metadata is stored as a uint8 array under ``__meta__`` (sorted-key JSON) so
that saving the same content twice yields identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from safetensors.numpy import load as st_load
from safetensors.numpy import save as st_save

from .errors import FormatError

META_KEY = "__meta__"


def dumps(arrays: dict, meta: dict | None = None) -> bytes:
    out = {}
    for name, arr in arrays.items():
        if name == META_KEY:
            raise FormatError(f"{META_KEY} is reserved")
        if hasattr(arr, "detach"):
            arr = arr.detach().cpu().numpy()
        out[name] = np.ascontiguousarray(arr)
    blob = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    out[META_KEY] = np.frombuffer(blob, dtype=np.uint8).copy()
    return st_save(out)


def loads(data: bytes) -> tuple[dict, dict]:
    try:
        arrays = st_load(data)
    except Exception as exc:  # safetensors raises its own error types
        raise FormatError(f"not an array container: {exc}") from exc
    if META_KEY not in arrays:
        raise FormatError("array container lacks a metadata record")
    meta = json.loads(arrays.pop(META_KEY).tobytes().decode())
    return arrays, meta


def save(path, arrays: dict, meta: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(arrays, meta))


def load(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing file: {path}")
    return loads(path.read_bytes())
