"""Versioned binary checkpoint container with byte-stable serialization.

Layout: magic "ECMC", u32 version, u64 header length, UTF-8 JSON header
(sorted keys) describing meta plus each tensor's name/dtype/shape/offset,
then the raw little-endian buffers concatenated in name order. Writing
the same tensors and meta twice yields byte-identical files, which is
what makes artifact-level determinism checks possible; pickle-based
serializers do not give that guarantee.
"""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

MAGIC = b"ECMC"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")

_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
    "uint8": np.uint8,
    "bool": np.bool_,
}


def _as_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.ascontiguousarray(value)
    if arr.dtype.name not in _DTYPES:
        raise FormatError(f"unsupported tensor dtype {arr.dtype.name}")
    return arr


def save_checkpoint(path, tensors: dict, meta: dict) -> None:
    """Write name-sorted tensors plus a JSON-safe meta dict."""
    arrays = {name: _as_array(t) for name, t in tensors.items()}
    entries = []
    offset = 0
    for name in sorted(arrays):
        arr = arrays[name]
        entries.append({
            "dtype": arr.dtype.name,
            "name": name,
            "nbytes": arr.nbytes,
            "offset": offset,
            "shape": list(arr.shape),
        })
        offset += arr.nbytes
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for name in sorted(arrays):
            fh.write(arrays[name].astype(arrays[name].dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors: dict[str, np.ndarray], meta: dict)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _PREFIX.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    header_end = _PREFIX.size + header_len
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[_PREFIX.size:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    payload = blob[header_end:]
    expected = sum(e["nbytes"] for e in header["tensors"])
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header declares {expected}")
    tensors = {}
    for entry in header["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise FormatError(f"{path}: unknown dtype {entry['dtype']!r}")
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).astype(dtype)
        tensors[entry["name"]] = arr.reshape(entry["shape"])
    return tensors, header["meta"]


def payload_hash(tensors: dict) -> str:
    """sha256 over the name-sorted raw buffers; stable content fingerprint."""
    digest = hashlib.sha256()
    arrays = {name: _as_array(t) for name, t in tensors.items()}
    for name in sorted(arrays):
        digest.update(name.encode("utf-8"))
        digest.update(arrays[name].tobytes())
    return digest.hexdigest()


def module_tensors(module: torch.nn.Module, prefix: str = "") -> dict:
    """Parameters and buffers of a module as numpy arrays, keyed by name."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[prefix + name] = tensor.detach().cpu().numpy()
    return out


def load_module_tensors(module: torch.nn.Module, tensors: dict, prefix: str = "") -> None:
    """Inverse of module_tensors; strict key and shape matching."""
    state = {}
    for name, ref in module.state_dict().items():
        key = prefix + name
        if key not in tensors:
            raise FormatError(f"checkpoint missing tensor {key!r}")
        arr = tensors[key]
        if tuple(arr.shape) != tuple(ref.shape):
            raise FormatError(
                f"tensor {key!r}: checkpoint shape {tuple(arr.shape)} != module shape {tuple(ref.shape)}"
            )
        state[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(ref.dtype)
    module.load_state_dict(state, strict=True)
