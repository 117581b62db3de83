"""Self-describing parameter container.

Layout::

    NODECAST-CKPT 1
    meta <canonical JSON>
    array <name> <dtype> <dims comma-separated, or '-' for a scalar> <offset> <nbytes>
    ...
    sha256 <hex digest of the payload>
    END
    <payload: arrays back to back, little-endian, in directory order>

The header is ASCII with ``\\n`` line endings and the directory is sorted by
name, so equal inputs always give equal bytes.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from nodecast.errors import PersistenceError

MAGIC = "NODECAST-CKPT"
VERSION = 1
_DTYPES = {"f8": "<f8", "f4": "<f4", "i8": "<i8"}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    lines = [f"{MAGIC} {VERSION}", "meta " + canonical_json(meta or {})]
    chunks, offset = [], 0
    for name in sorted(arrays):
        if not name or any(c.isspace() for c in name):
            raise PersistenceError(f"array name {name!r} must be non-empty without whitespace")
        arr = np.asarray(arrays[name])
        code = {"f": "f8", "i": "i8", "u": "i8"}.get(arr.dtype.kind)
        if arr.dtype == np.float32:
            code = "f4"
        if code is None:
            raise PersistenceError(f"array {name} has unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        dims = ",".join(str(d) for d in arr.shape) or "-"
        lines.append(f"array {name} {code} {dims} {offset} {len(raw)}")
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    lines.append("sha256 " + hashlib.sha256(payload).hexdigest())
    lines.append("END")
    return ("\n".join(lines) + "\n").encode("ascii") + payload


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    end = blob.find(b"\nEND\n")
    if end < 0:
        raise PersistenceError("checkpoint header is incomplete (no END marker)")
    try:
        header = blob[:end].decode("ascii").split("\n")
    except UnicodeDecodeError:
        raise PersistenceError("checkpoint header is not ASCII") from None
    payload = blob[end + len(b"\nEND\n"):]
    first = header[0].split()
    if len(first) != 2 or first[0] != MAGIC:
        raise PersistenceError("not a nodecast checkpoint")
    if first[1] != str(VERSION):
        raise PersistenceError(f"checkpoint format version {first[1]} is not supported (expected {VERSION})")
    meta, entries, digest = {}, [], None
    for line in header[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            try:
                meta = json.loads(rest)
            except json.JSONDecodeError:
                raise PersistenceError("checkpoint meta line is not valid JSON") from None
        elif kind == "array":
            fields = rest.split()
            if len(fields) != 5 or not (fields[3].isdigit() and fields[4].isdigit()):
                raise PersistenceError(f"malformed array entry {line!r}")
            entries.append(fields)
        elif kind == "sha256":
            digest = rest.strip()
        else:
            raise PersistenceError(f"unexpected header line {line!r}")
    if digest is None:
        raise PersistenceError("checkpoint has no checksum")
    expected = sum(int(e[4]) for e in entries)
    if len(payload) != expected:
        raise PersistenceError(f"payload holds {len(payload)} bytes, directory lists {expected} (truncated?)")
    if hashlib.sha256(payload).hexdigest() != digest:
        raise PersistenceError("checkpoint checksum mismatch")
    arrays = {}
    for name, code, dims, offset, nbytes in entries:
        if code not in _DTYPES:
            raise PersistenceError(f"unknown dtype code {code!r} for {name}")
        try:
            shape = () if dims == "-" else tuple(int(d) for d in dims.split(","))
            start = int(offset)
            arr = np.frombuffer(payload[start:start + int(nbytes)], dtype=_DTYPES[code]).reshape(shape)
        except ValueError as exc:
            raise PersistenceError(f"array {name} does not match its directory entry: {exc}") from None
        arrays[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return arrays, meta


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(encode(arrays, meta))


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read checkpoint {path}: {exc}") from None
    return decode(blob)


def save_model(path, model, meta: dict | None = None) -> None:
    """Parameters plus the model configuration (and any extra ``meta``)."""
    info = {"model": model.cfg.to_dict(), **(meta or {})}
    save_arrays(path, {k: v.data for k, v in model.params.items()}, info)


def load_model(path):
    from nodecast.autograd import Tensor
    from nodecast.nodeformer import ModelConfig, NodeFormer

    arrays, meta = load_arrays(path)
    if "model" not in meta:
        raise PersistenceError(f"{path} holds no model configuration")
    cfg = ModelConfig(**meta["model"])
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    return NodeFormer(cfg, params), meta
