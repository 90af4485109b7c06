"""Binary container for named arrays plus a JSON manifest.

Layout::

    b"DMCK" | u16 version | u32 manifest_len | manifest (UTF-8 JSON) | payload

The manifest lists every entry as ``{name, shape, dtype, offset, nbytes}``
into the payload, carries free-form ``meta`` and the sha256 of the payload.
Arrays are stored little-endian. ``decode_container`` returns ``None`` as ⊥
on any malformed input; the path-level loaders turn that into a
:class:`~dualmem.errors.CheckpointError` naming the file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import CheckpointError
from .seeding import digest_bytes

MAGIC = b"DMCK"
VERSION = 1
_HEADER = struct.Struct("<HI")
_DTYPES = {"<f8", "<f4", "<i8", "|u1", "|b1"}

Arrays = Dict[str, np.ndarray]


def _wire_dtype(arr: np.ndarray) -> np.dtype:
    kind = arr.dtype.kind
    if kind == "b":
        return np.dtype("|b1")
    if arr.dtype == np.uint8:
        return np.dtype("|u1")
    if kind == "f":
        return np.dtype("<f4") if arr.dtype.itemsize == 4 else np.dtype("<f8")
    if kind in "iu":
        return np.dtype("<i8")
    raise CheckpointError(f"unsupported array dtype {arr.dtype}")


def encode_container(arrays: Mapping[str, np.ndarray], meta: Optional[Mapping[str, Any]] = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        wire = np.ascontiguousarray(arr.astype(_wire_dtype(arr), copy=False))
        raw = wire.tobytes()
        entries.append(
            {"name": name, "shape": list(wire.shape), "dtype": wire.dtype.str, "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "version": VERSION,
        "meta": dict(meta or {}),
        "entries": entries,
        "digest": digest_bytes(payload),
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MAGIC + _HEADER.pack(VERSION, len(blob)) + blob + payload


def decode_container(data: bytes) -> Optional[Tuple[Arrays, Dict[str, Any]]]:
    """Decode a container; returns None as ⊥ on malformed input."""
    try:
        if not data.startswith(MAGIC):
            return None
        head = len(MAGIC) + _HEADER.size
        version, mlen = _HEADER.unpack(data[len(MAGIC):head])
        if version != VERSION:
            return None
        manifest = json.loads(data[head : head + mlen].decode("utf-8"))
        payload = data[head + mlen :]
        if manifest.get("digest") != digest_bytes(payload):
            return None
        arrays: Arrays = {}
        for e in manifest["entries"]:
            if e["dtype"] not in _DTYPES:
                return None
            dt = np.dtype(e["dtype"])
            shape = tuple(int(s) for s in e["shape"])
            start, nbytes = int(e["offset"]), int(e["nbytes"])
            if nbytes != int(np.prod(shape)) * dt.itemsize or start + nbytes > len(payload):
                return None
            arrays[e["name"]] = np.frombuffer(payload, dtype=dt, count=int(np.prod(shape)), offset=start).reshape(shape).copy()
        return arrays, dict(manifest.get("meta", {}))
    except Exception:
        return None


def save_container(path: Path, arrays: Mapping[str, np.ndarray], meta: Optional[Mapping[str, Any]] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_container(arrays, meta))
    tmp.replace(path)


def load_container(path: Path) -> Tuple[Arrays, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"{path}: file not found")
    out = decode_container(path.read_bytes())
    if out is None:
        raise CheckpointError(f"{path}: malformed container (bad magic, version, manifest or digest)")
    return out


# ----------------------------
# Single-array buffers
# ----------------------------

def save_array(path: Path, array: np.ndarray, meta: Optional[Mapping[str, Any]] = None) -> None:
    save_container(path, {"array": array}, meta)


def load_array(path: Path) -> np.ndarray:
    arrays, _ = load_container(path)
    if "array" not in arrays:
        raise CheckpointError(f"{path}: not a single-array buffer")
    return arrays["array"]


# ----------------------------
# Checkpoints: model parameters + optimizer + metadata
# ----------------------------

def save_checkpoint(
    path: Path,
    params: Mapping[str, np.ndarray],
    optimizer: Optional[Mapping[str, np.ndarray]] = None,
    meta: Optional[Mapping[str, Any]] = None,
) -> None:
    arrays = {f"param/{k}": v for k, v in params.items()}
    arrays.update({f"optim/{k}": v for k, v in (optimizer or {}).items()})
    save_container(path, arrays, {"kind": "checkpoint", **dict(meta or {})})


def load_checkpoint(path: Path) -> Tuple[Arrays, Arrays, Dict[str, Any]]:
    arrays, meta = load_container(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointError(f"{path}: container is not a checkpoint (kind={meta.get('kind')!r})")
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    optim = {k[len("optim/"):]: v for k, v in arrays.items() if k.startswith("optim/")}
    return params, optim, meta
