"""Checkpoint I/O.

A checkpoint is a directory holding:
  manifest.txt  one line per parameter: name<TAB>dtype<TAB>shape-comma-list<TAB>byte-offset
  weights.bin   concatenated little-endian float32 values, row-major, manifest order
  config.json   metadata: module kind, architecture dims, vocab hashes, step count

weights.bin and manifest.txt are bit-exact contracts; rewriting the same
parameters yields byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DataError, ManifestMismatch

MANIFEST = "manifest.txt"
WEIGHTS = "weights.bin"
META = "config.json"


def vocab_hash(symbols) -> str:
    h = hashlib.sha256("\x00".join(symbols).encode("utf-8")).hexdigest()
    return h[:16]


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict):
    """Write arrays (insertion order preserved) plus a metadata snapshot."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        shape = ",".join(str(s) for s in arr.shape) if arr.ndim else ""
        lines.append(f"{name}\tf32\t{shape}\t{offset}")
        blobs.append(data.tobytes())
        offset += data.nbytes
    (path / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(path / WEIGHTS, "wb") as fh:
        for blob in blobs:
            fh.write(blob)
    (path / META).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> list[tuple[str, str, tuple, int]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint directory not found: {path}")
    mf = path / MANIFEST
    if not mf.exists():
        raise CheckpointError(f"missing manifest: {mf}")
    entries = []
    for line_no, line in enumerate(mf.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CheckpointError(f"manifest line {line_no}: expected 4 tab-separated fields")
        name, dtype, shape_s, offset_s = parts
        if dtype != "f32":
            raise CheckpointError(f"manifest line {line_no}: unsupported dtype {dtype!r}")
        try:
            shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
            offset = int(offset_s)
        except ValueError:
            raise CheckpointError(f"manifest line {line_no}: bad shape or offset") from None
        entries.append((name, dtype, shape, offset))
    return entries


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read arrays and metadata back; validates offsets and total size."""
    path = Path(path)
    entries = read_manifest(path)
    wf = path / WEIGHTS
    if not wf.exists():
        raise CheckpointError(f"missing weights file: {wf}")
    raw = wf.read_bytes()
    arrays = {}
    expected = 0
    for name, _, shape, offset in entries:
        n = int(np.prod(shape)) if shape else 1
        nbytes = n * 4
        if offset != expected:
            raise CheckpointError(f"parameter {name!r}: offset {offset} != expected {expected}")
        if offset + nbytes > len(raw):
            raise CheckpointError(f"parameter {name!r}: weights file truncated")
        flat = np.frombuffer(raw, dtype="<f4", count=n, offset=offset)
        arrays[name] = flat.reshape(shape).astype(np.float32)
        expected = offset + nbytes
    if expected != len(raw):
        raise CheckpointError(f"weights file has {len(raw) - expected} trailing bytes")
    metaf = path / META
    if not metaf.exists():
        raise CheckpointError(f"missing metadata: {metaf}")
    try:
        meta = json.loads(metaf.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"corrupt metadata json: {e}") from None
    return arrays, meta


def require_meta(meta: dict, key: str, expected):
    """Validate one metadata field; mismatches are load-time rejections."""
    got = meta.get(key)
    if got != expected:
        raise ManifestMismatch(f"checkpoint {key} mismatch: checkpoint has {got!r}, expected {expected!r}")


def load_params(param_set, arrays: dict[str, np.ndarray], allow_missing: tuple = ()):
    """Copy checkpoint arrays into a ParamSet by name, validating shapes."""
    for name, param in param_set.items():
        if name not in arrays:
            if any(name.startswith(p) for p in allow_missing):
                continue
            raise ManifestMismatch(f"checkpoint missing parameter {name!r}")
        arr = arrays[name]
        if tuple(arr.shape) != tuple(param.tensor.data.shape):
            raise ManifestMismatch(
                f"parameter {name!r} shape {arr.shape} != model shape {param.tensor.data.shape}")
        param.tensor.data = arr.astype(param.tensor.data.dtype, copy=True)
