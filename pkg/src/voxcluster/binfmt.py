"""Container format shared by model and ensemble files.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON
header, then little-endian float32 blobs in the order listed under
``header["tensors"]``.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

FORMAT_VERSION = 1


def write_container(path, magic: bytes, header: dict, tensors) -> None:
    """``tensors`` is a sequence of (name, array) pairs."""
    assert len(magic) == 8
    blobs = []
    meta = []
    for name, arr in tensors:
        a = np.ascontiguousarray(arr, dtype="<f4")
        meta.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = dict(header)
    header["version"] = FORMAT_VERSION
    header["tensors"] = meta
    header["byte_length"] = sum(len(b) for b in blobs)
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def read_container(path, magic: bytes):
    """Return ``(header, {name: float32 array})``; raise FormatError on any inconsistency."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:8] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    (hlen,) = struct.unpack_from("<I", data, 8)
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')}")
    body = data[12 + hlen:]
    if len(body) != header.get("byte_length"):
        raise FormatError(f"{path}: payload is {len(body)} bytes, header says {header.get('byte_length')}")
    arrays = {}
    pos = 0
    for t in header["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        chunk = body[pos:pos + 4 * n]
        if len(chunk) != 4 * n:
            raise FormatError(f"{path}: tensor {t['name']} truncated")
        arrays[t["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(t["shape"]).copy()
        pos += 4 * n
    return header, arrays
