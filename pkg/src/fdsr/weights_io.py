"""FDSRW1 tensor container.

Layout (little-endian)::

    b"FDSRW1\\0"
    u32 entry count
    per entry: u16 name length, UTF-8 name, u8 dtype tag (0 = f32),
               u8 ndim, ndim x u32 dims, raw f32 payload

The network config travels in a JSON sidecar next to the container.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Optional, Union

import numpy as np

from .net import FdsrConfig, FdsrWeights
from .tensor import Tensor

MAGIC = b"FDSRW1\0"
DTYPE_F32 = 0

PathLike = Union[str, Path]


class ContainerError(ValueError):
    pass


def write_arrays(stream: BinaryIO, arrays: Mapping[str, np.ndarray]) -> None:
    stream.write(MAGIC)
    stream.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        stream.write(struct.pack("<H", len(raw)))
        stream.write(raw)
        stream.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
        stream.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        stream.write(arr.tobytes(order="C"))


def _read_exact(stream: BinaryIO, n: int, what: str) -> bytes:
    b = stream.read(n)
    if len(b) != n:
        raise ContainerError(f"truncated container while reading {what}")
    return b


def read_arrays(stream: BinaryIO) -> Dict[str, np.ndarray]:
    if _read_exact(stream, len(MAGIC), "magic") != MAGIC:
        raise ContainerError("not an FDSRW1 container (bad magic)")
    (count,) = struct.unpack("<I", _read_exact(stream, 4, "entry count"))
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(stream, 2, "name length"))
        name = _read_exact(stream, nlen, "name").decode("utf-8")
        tag, ndim = struct.unpack("<BB", _read_exact(stream, 2, "dtype/ndim"))
        if tag != DTYPE_F32:
            raise ContainerError(f"{name}: unsupported dtype tag {tag}")
        dims = struct.unpack(f"<{ndim}I", _read_exact(stream, 4 * ndim, "dims"))
        n = int(np.prod(dims)) if ndim else 1
        payload = _read_exact(stream, 4 * n, f"payload of {name}")
        if name in out:
            raise ContainerError(f"duplicate entry {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return out


def sidecar_path(path: PathLike) -> Path:
    return Path(str(path) + ".json")


def save_weights(path: PathLike, weights: FdsrWeights, config: Optional[FdsrConfig] = None) -> None:
    buf = io.BytesIO()
    write_arrays(buf, {k: t.data for k, t in weights.items()})
    Path(path).write_bytes(buf.getvalue())
    if config is not None:
        sidecar_path(path).write_text(json.dumps({"schema_version": 1, "fdsr": config.to_dict()}, indent=2, sort_keys=True) + "\n")


def load_weights(path: PathLike, requires_grad: bool = True) -> FdsrWeights:
    with open(path, "rb") as f:
        arrays = read_arrays(f)
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in arrays.items()}


def load_config(path: PathLike) -> FdsrConfig:
    side = sidecar_path(path)
    if not side.exists():
        raise FileNotFoundError(f"missing config sidecar {side}")
    return FdsrConfig.from_dict(json.loads(side.read_text())["fdsr"])
