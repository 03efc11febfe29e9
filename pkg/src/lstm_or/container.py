"""Self-describing array container used for prepared datasets and checkpoints.

Byte layout::

    b"LSTMORC1\\n"                      9-byte magic
    uint64 little-endian              length N of the JSON header
    N bytes UTF-8 JSON                {"meta": {...}, "arrays": [descriptor, ...]}
    payload                           arrays back to back, C order, little-endian

Each descriptor is ``{"name", "dtype", "shape", "offset", "nbytes"}`` with
``offset`` relative to the start of the payload. The JSON is written with
sorted keys and no whitespace, so identical inputs give identical bytes.
"""

import json
import struct

import numpy as np

MAGIC = b"LSTMORC1\n"
_DTYPES = {"float64": "<f8", "int64": "<i8", "bool": "|b1"}


class ContainerError(ValueError):
    pass


def write_container(path, meta, arrays):
    """Write ``meta`` (JSON-serialisable) and an ordered mapping of arrays."""
    descriptors = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        kind = arr.dtype.name
        if kind not in _DTYPES:
            if np.issubdtype(arr.dtype, np.integer):
                kind = "int64"
            elif np.issubdtype(arr.dtype, np.floating):
                kind = "float64"
            else:
                raise ContainerError(f"unsupported dtype {arr.dtype} for {name!r}")
        data = np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes()
        descriptors.append({"name": name, "dtype": kind, "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"meta": meta, "arrays": descriptors}, sort_keys=True,
                        separators=(",", ":"), allow_nan=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def read_container(path):
    """Return ``(meta, arrays)`` with arrays in their stored order."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise ContainerError(f"{path}: not an LSTM-OR container")
    pos = len(MAGIC)
    if len(blob) < pos + 8:
        raise ContainerError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(blob[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt header ({exc})") from None
    payload = memoryview(blob)[pos + n:]
    arrays = {}
    for d in header["arrays"]:
        raw = payload[d["offset"]:d["offset"] + d["nbytes"]]
        if len(raw) != d["nbytes"]:
            raise ContainerError(f"{path}: array {d['name']!r} is truncated")
        dtype = np.dtype(_DTYPES[d["dtype"]])
        arrays[d["name"]] = np.frombuffer(raw, dtype=dtype).reshape(d["shape"]).astype(dtype.newbyteorder("="))
    return header["meta"], arrays
