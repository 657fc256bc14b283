"""Raw float32 sample-major arrays with JSON sidecars.

``name.f32`` holds little-endian float32 rows; ``name.f32.json`` records
``n_samples``, ``row_length``, ``dtype``, ``order`` and whatever else the
writer adds (scheme path, basis, provenance).
"""

from __future__ import annotations

import json
import os

import numpy as np

from .gradients import atomic_write_bytes

DTYPE = "<f4"


def sidecar_path(path) -> str:
    return os.fspath(path) + ".json"


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_array(path, arr, **meta) -> None:
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError("expected a 2-D sample-major array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("refusing to store non-finite values")
    side = {"n_samples": int(arr.shape[0]), "row_length": int(arr.shape[1]),
            "dtype": "float32-le", "order": "sample-major", **meta}
    atomic_write_bytes(path, np.ascontiguousarray(arr, dtype=DTYPE).tobytes())
    atomic_write_bytes(sidecar_path(path), dumps_canonical(side).encode("utf-8"))


def read_array(path):
    """Return ``(array as float64, sidecar dict)``."""
    try:
        with open(sidecar_path(path), encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"missing sidecar {sidecar_path(path)}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt sidecar {sidecar_path(path)}: {exc}") from None
    if meta.get("dtype") != "float32-le" or meta.get("order") != "sample-major":
        raise ValueError(f"{path}: unsupported dtype/order in sidecar")
    n, k = int(meta["n_samples"]), int(meta["row_length"])
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) != 4 * n * k:
        raise ValueError(f"{path}: expected {4 * n * k} bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=DTYPE).reshape(n, k).astype(np.float64)
    return arr, meta


def relative_to(target, start_file) -> str:
    """Path of `target` relative to the directory holding `start_file`."""
    return os.path.relpath(os.path.abspath(target), os.path.dirname(os.path.abspath(start_file)))


def resolve_from(path, start_file) -> str:
    if os.path.isabs(path):
        return path
    return os.path.join(os.path.dirname(os.path.abspath(start_file)), path)
