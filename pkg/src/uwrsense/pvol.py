"""PVOL container: little-endian header plus raw complex payload.

Layout::

    b"PVOL1\\0"                       6-byte magic
    u32 X, Y, Z, T, L, dtype          dtype 0 = complex64, 1 = complex128
    payload                           x fastest, then y, z, t; coil outermost

In memory the payload is an array indexed ``[coil, t, x, y, z]``.  A JSON
sidecar with the same stem carries geometry and provenance.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import ReconError

MAGIC = b"PVOL1\0"
_HEADER = struct.Struct("<6I")
_DTYPES = {0: np.dtype("<c8"), 1: np.dtype("<c16")}


class PvolError(ReconError, ValueError):
    pass


def write_pvol(path, array, dtype_code=1, sidecar: dict | None = None):
    """Write an array ``(L, T, X, Y, Z)`` (or ``(T, X, Y, Z)`` / ``(X, Y, Z)``)."""
    arr = np.asarray(array)
    while arr.ndim < 5:
        arr = arr[None]
    if arr.ndim != 5:
        raise PvolError(f"cannot store array of shape {arr.shape}")
    L, T, X, Y, Z = arr.shape
    payload = np.ascontiguousarray(np.transpose(arr, (0, 1, 4, 3, 2)), dtype=_DTYPES[dtype_code])
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(X, Y, Z, T, L, dtype_code))
        fh.write(payload.tobytes())
    if sidecar is not None:
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def read_pvol(path) -> np.ndarray:
    """Return the payload as ``(L, T, X, Y, Z)`` complex128."""
    raw = Path(path).read_bytes()
    if raw[:6] != MAGIC:
        raise PvolError(f"{path}: not a PVOL file")
    if len(raw) < 6 + _HEADER.size:
        raise PvolError(f"{path}: truncated header")
    X, Y, Z, T, L, code = _HEADER.unpack_from(raw, 6)
    if min(X, Y, Z, T, L) < 1 or code not in _DTYPES:
        raise PvolError(f"{path}: invalid header {(X, Y, Z, T, L, code)}")
    dt = _DTYPES[code]
    body = raw[6 + _HEADER.size :]
    if len(body) != dt.itemsize * X * Y * Z * T * L:
        raise PvolError(f"{path}: payload size {len(body)} does not match header")
    arr = np.frombuffer(body, dtype=dt).reshape(L, T, Z, Y, X)
    return np.transpose(arr, (0, 1, 4, 3, 2)).astype(np.complex128)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def read_sidecar(path) -> dict:
    p = sidecar_path(path)
    return json.loads(p.read_text()) if p.exists() else {}


def write_cov(path, psi, extra: dict | None = None):
    psi = np.asarray(psi)
    doc = {"re": psi.real.tolist(), "im": psi.imag.tolist()}
    doc.update(extra or {})
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_cov(path) -> np.ndarray:
    doc = json.loads(Path(path).read_text())
    return np.asarray(doc["re"]) + 1j * np.asarray(doc["im"])
