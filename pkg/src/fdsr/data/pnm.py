"""Binary portable any-map I/O: 16-bit depth (P5, maxval 65535) and RGB (P6, maxval 255).

Depth maps are ``uint16`` arrays of shape (H, W) in millimetres with 0 marking
a hole. RGB images are ``uint8`` arrays of shape (H, W, 3).
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import BinaryIO, Union

import numpy as np

Source = Union[str, Path, bytes, BinaryIO]


class PnmError(ValueError):
    pass


class MalformedHeaderError(PnmError):
    pass


class UnsupportedMaxvalError(PnmError):
    pass


class TruncatedDataError(PnmError):
    pass


def _open(src: Source) -> BinaryIO:
    if isinstance(src, (bytes, bytearray)):
        return io.BytesIO(src)
    if isinstance(src, (str, Path)):
        return io.BytesIO(Path(src).read_bytes())
    return src


def _read_token(f: BinaryIO) -> bytes:
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            if tok:
                return tok
            raise MalformedHeaderError("unexpected end of header")
        if c == b"#" and not tok:
            while c not in (b"\n", b"\r", b""):
                c = f.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def _read_header(f: BinaryIO, magic: bytes) -> tuple[int, int, int]:
    got = f.read(2)
    if got != magic:
        raise MalformedHeaderError(f"expected magic {magic!r}, got {got!r}")
    try:
        w, h, maxval = (int(_read_token(f)) for _ in range(3))
    except ValueError as exc:
        raise MalformedHeaderError(f"non-numeric header field: {exc}") from None
    if w < 1 or h < 1:
        raise MalformedHeaderError(f"invalid dimensions {w}x{h}")
    return w, h, maxval


def _payload(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedDataError(f"payload truncated: expected {n} bytes, got {len(data)}")
    return data


def decode_pgm16(src: Source) -> np.ndarray:
    f = _open(src)
    w, h, maxval = _read_header(f, b"P5")
    if maxval != 65535:
        raise UnsupportedMaxvalError(f"depth PGM must have maxval 65535, got {maxval}")
    return np.frombuffer(_payload(f, 2 * w * h), dtype=">u2").reshape(h, w).astype(np.uint16)


def encode_pgm16(depth: np.ndarray) -> bytes:
    depth = np.asarray(depth)
    if depth.ndim != 2 or depth.dtype != np.uint16:
        raise ValueError(f"depth must be a 2-D uint16 array, got {depth.dtype} {depth.shape}")
    h, w = depth.shape
    return f"P5\n{w} {h}\n65535\n".encode("ascii") + depth.astype(">u2").tobytes()


def decode_pgm8(src: Source) -> np.ndarray:
    f = _open(src)
    w, h, maxval = _read_header(f, b"P5")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"8-bit PGM must have maxval 255, got {maxval}")
    return np.frombuffer(_payload(f, w * h), dtype=np.uint8).reshape(h, w).copy()


def encode_pgm8(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"image must be a 2-D uint8 array, got {img.dtype} {img.shape}")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def decode_ppm(src: Source) -> np.ndarray:
    f = _open(src)
    w, h, maxval = _read_header(f, b"P6")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"PPM must have maxval 255, got {maxval}")
    return np.frombuffer(_payload(f, 3 * w * h), dtype=np.uint8).reshape(h, w, 3).copy()


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"rgb must be an (H, W, 3) uint8 array, got {rgb.dtype} {rgb.shape}")
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def read_pgm16(path: Source) -> np.ndarray:
    return decode_pgm16(path)


def write_pgm16(path: Union[str, Path], depth: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm16(depth))


def read_ppm(path: Source) -> np.ndarray:
    return decode_ppm(path)


def write_ppm(path: Union[str, Path], rgb: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(rgb))


def write_pgm8(path: Union[str, Path], img: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm8(img))
