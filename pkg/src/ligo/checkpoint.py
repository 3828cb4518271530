"""Self-describing binary checkpoint container.

Layout::

    b"LIGOCKPT"                 8-byte magic
    uint32 LE                   format version (1)
    uint64 LE                   header length in bytes
    header                      UTF-8 JSON: kind, config(s), dtype, endianness,
                                tensor manifest (name, shape, offset, length), meta
    payload                     raw row-major little-endian tensors, manifest order

Offsets in the manifest are relative to the start of the payload. The
header is serialized with sorted keys so identical content gives identical
bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np

from .errors import CheckpointError
from .ligo_operator import LigoParams, ligo_shapes
from .model import DTYPES, ModelConfig, ParamSet, param_shapes

MAGIC = b"LIGOCKPT"
VERSION = 1
LIGO_PREFIX = "ligo/"
_PRELUDE = struct.Struct("<8sIQ")


def _tensors_of(obj) -> Tuple[str, Dict[str, np.ndarray], dict]:
    if isinstance(obj, ParamSet):
        return "paramset", dict(obj.items()), {"config": obj.config.to_dict()}
    if isinstance(obj, LigoParams):
        return ("ligo", {LIGO_PREFIX + k: v for k, v in obj.items()},
                {"source": obj.source.to_dict(), "target": obj.target.to_dict()})
    raise TypeError(f"cannot checkpoint {type(obj).__name__}")


def encode_checkpoint(obj: Union[ParamSet, LigoParams], meta: Optional[dict] = None) -> bytes:
    kind, tensors, configs = _tensors_of(obj)
    dtypes = {str(v.dtype) for v in tensors.values()}
    if len(dtypes) != 1 or next(iter(dtypes)) not in DTYPES:
        raise CheckpointError(f"tensors must share one float dtype, got {sorted(dtypes)}")
    dtype = dtypes.pop()
    manifest, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "length": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"kind": kind, "dtype": dtype, "endianness": "little", "tensors": manifest,
              "meta": meta or {}, **configs}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PRELUDE.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def save_checkpoint(obj: Union[ParamSet, LigoParams], path, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    data = encode_checkpoint(obj, meta)
    try:
        path.write_bytes(data)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from None
    return path


def decode_checkpoint(data: bytes, where: str = "<bytes>"):
    if len(data) < _PRELUDE.size:
        raise CheckpointError(f"{where}: truncated before header")
    magic, version, hlen = _PRELUDE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{where}: not a LIGOCKPT container")
    if version != VERSION:
        raise CheckpointError(f"{where}: unsupported container version {version} (expected {VERSION})")
    start = _PRELUDE.size + hlen
    if len(data) < start:
        raise CheckpointError(f"{where}: truncated header")
    try:
        header = json.loads(data[_PRELUDE.size:start].decode("utf-8"))
        dtype = np.dtype(DTYPES[header["dtype"]]).newbyteorder("<")
        kind = header["kind"]
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{where}: corrupt header ({e})") from None
    if header.get("endianness") != "little":
        raise CheckpointError(f"{where}: unsupported endianness {header.get('endianness')!r}")

    tensors = {}
    for t in manifest:
        shape = tuple(t["shape"])
        n = int(np.prod(shape)) * dtype.itemsize
        lo, hi = start + t["offset"], start + t["offset"] + t["length"]
        if t["length"] != n:
            raise CheckpointError(f"{where}: {t['name']} length {t['length']} does not match shape {shape}")
        if hi > len(data):
            raise CheckpointError(f"{where}: truncated payload in {t['name']}")
        tensors[t["name"]] = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)),
                                           offset=lo).reshape(shape).astype(dtype.newbyteorder("="))
    end = start + sum(t["length"] for t in manifest)
    if end != len(data):
        raise CheckpointError(f"{where}: {len(data) - end} unexpected trailing bytes")

    try:
        if kind == "paramset":
            cfg = ModelConfig.from_dict(header["config"])
            expected = param_shapes(cfg)
            obj_tensors = tensors
        elif kind == "ligo":
            src, tgt = ModelConfig.from_dict(header["source"]), ModelConfig.from_dict(header["target"])
            expected = {LIGO_PREFIX + k: v for k, v in ligo_shapes(src, tgt).items()}
            obj_tensors = {k[len(LIGO_PREFIX):]: v for k, v in tensors.items()}
        else:
            raise CheckpointError(f"{where}: unknown checkpoint kind {kind!r}")
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, CheckpointError):
            raise
        raise CheckpointError(f"{where}: bad config in header ({e})") from None
    got = {k: v.shape for k, v in tensors.items()}
    if got != {k: tuple(s) for k, s in expected.items()}:
        raise CheckpointError(f"{where}: tensor manifest does not match the {kind} schema of its config")
    obj = ParamSet(cfg, obj_tensors) if kind == "paramset" else LigoParams(src, tgt, obj_tensors)
    return obj, header


def read_checkpoint(path):
    """Return ``(object, header)``; the header carries ``meta``."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    return decode_checkpoint(data, str(path))


def load_checkpoint(path):
    return read_checkpoint(path)[0]


def content_hash(path) -> str:
    """Git-style blob hash (sha1 over ``b"blob <len>\\0" + content``)."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
