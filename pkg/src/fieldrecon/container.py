"""FRD1 named-array container.

Layout::

    b"FRD1" | u8 version | u32 LE header length | UTF-8 JSON header | payload

The header is ``{"entries": [{"name", "dtype", "shape", "offset", "len_bytes"}, ...]}``
with offsets relative to the start of the payload. Payload arrays are row-major
little-endian float32. An optional top-level ``"meta"`` object carries free-form
JSON (architecture config, step counts, normalization notes).
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"FRD1"
VERSION = 1
_DTYPES = {"f32": np.dtype("<f4")}


class ContainerError(ValueError):
    pass


def _check_name(name: str) -> None:
    if not isinstance(name, str) or not name:
        raise ContainerError("entry names must be non-empty strings")
    try:
        name.encode("ascii")
    except UnicodeEncodeError:
        raise ContainerError(f"entry name {name!r} is not ASCII") from None


def dumps(arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        _check_name(name)
        a = np.require(np.asarray(arr, dtype=_DTYPES["f32"]), requirements="C")  # keeps 0-d shapes
        if not np.all(np.isfinite(a)):
            raise ContainerError(f"entry {name!r} contains non-finite values")
        raw = a.tobytes(order="C")
        entries.append({"name": name, "dtype": "f32", "shape": list(a.shape),
                        "offset": offset, "len_bytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header: dict[str, Any] = {"entries": entries}
    if meta is not None:
        header["meta"] = dict(meta)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, bytes([VERSION]), struct.pack("<I", len(hbytes)), hbytes, *chunks])


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if buf[:4] != MAGIC:
        raise ContainerError("bad magic: not an FRD1 container")
    if len(buf) < 9:
        raise ContainerError("truncated preamble")
    if buf[4] != VERSION:
        raise ContainerError(f"unsupported FRD1 version {buf[4]}")
    (hlen,) = struct.unpack("<I", buf[5:9])
    if 9 + hlen > len(buf):
        raise ContainerError("truncated header")
    try:
        header = json.loads(buf[9:9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"corrupt header: {exc}") from None
    payload = memoryview(buf)[9 + hlen:]
    out: dict[str, np.ndarray] = {}
    for e in header.get("entries", []):
        code = e.get("dtype")
        if code not in _DTYPES:
            raise ContainerError(f"unknown dtype code {code!r} for entry {e.get('name')!r}")
        dt = _DTYPES[code]
        shape = tuple(int(s) for s in e["shape"])
        start, n = int(e["offset"]), int(e["len_bytes"])
        if n != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise ContainerError(f"entry {e['name']!r}: length does not match shape")
        if start + n > len(payload):
            raise ContainerError(f"truncated payload in entry {e['name']!r}")
        out[e["name"]] = np.frombuffer(payload[start:start + n], dtype=dt).reshape(shape).copy()
    return out, header.get("meta", {})


def write(path: str | os.PathLike, arrays: Mapping[str, np.ndarray],
          meta: Mapping[str, Any] | None = None) -> None:
    """Write ``arrays`` to ``path`` atomically (temp file + rename)."""
    path = Path(path)
    data = dumps(arrays, meta)
    tmp = path.with_name(path.name + ".part")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def read(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())[0]


def read_with_meta(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return loads(Path(path).read_bytes())
