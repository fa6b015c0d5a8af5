"""Binary tensor framing shared with engine clients.

A frame is one JSON header line (UTF-8, '\\n'-terminated) followed by the raw
little-endian float32 payloads of the tensors declared in the header's
"tensors" list, concatenated in declaration order. Payload length must equal
4 * prod(shape) per tensor. This module is implemented independently of any
client codec; the integration tests cross-validate the two.
"""

from __future__ import annotations

import json

import numpy as np


class WireError(ValueError):
    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


def encode_frame(meta: dict, tensors: dict[str, np.ndarray] | None = None) -> bytes:
    tensors = tensors or {}
    header = dict(meta)
    header["tensors"] = [{"name": name, "dtype": "f32", "shape": list(arr.shape)}
                         for name, arr in tensors.items()]
    out = json.dumps(header).encode() + b"\n"
    for arr in tensors.values():
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return out


def decode_frame(body: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    newline = body.find(b"\n")
    if newline < 0:
        raise WireError("missing JSON header line", byte_offset=0)
    try:
        header = json.loads(body[:newline].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"malformed JSON header: {exc}",
                        byte_offset=getattr(exc, "pos", 0)) from exc
    if not isinstance(header, dict):
        raise WireError("header must be a JSON object", byte_offset=0)
    tensors: dict[str, np.ndarray] = {}
    cursor = newline + 1
    for decl in header.get("tensors", []):
        name = decl.get("name")
        shape = tuple(int(d) for d in decl.get("shape", []))
        if decl.get("dtype", "f32") != "f32":
            raise WireError(f"unsupported dtype {decl.get('dtype')!r}", byte_offset=cursor)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        chunk = body[cursor:cursor + 4 * count]
        if len(chunk) != 4 * count:
            raise WireError(f"tensor {name!r} payload truncated", byte_offset=cursor)
        tensors[name] = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        cursor += 4 * count
    if cursor != len(body):
        raise WireError(f"{len(body) - cursor} trailing bytes", byte_offset=cursor)
    return header, tensors
