"""Binary checkpoint container shared by the SNN and CNN models.

Layout: 4-byte magic, little-endian u64 header length, UTF-8 JSON header,
then the arrays back to back as little-endian float32. The header lists each
array's name and shape in file order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NRMC"


def save_arrays(path: str | Path, header: dict, arrays: dict[str, np.ndarray]):
    header = dict(header)
    header["arrays"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_arrays(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen))
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(4 * count)
            if len(buf) != 4 * count:
                raise ValueError(f"{path}: truncated at array {spec['name']!r}")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
    return header, arrays
