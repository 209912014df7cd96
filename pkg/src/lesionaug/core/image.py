"""RGB image buffer and binary PPM / 8-bit PNG file I/O."""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    """Base class for image parse errors."""


class MalformedHeader(ImageFormatError):
    pass


class TruncatedPayload(ImageFormatError):
    pass


class UnsupportedMaxval(ImageFormatError):
    pass


class UnsupportedFormat(ImageFormatError):
    pass


class ImageBuffer:
    """H x W x 3 array of float64 intensities in [0, 1].

    The array is stored row-major (``data[y, x, c]``) and marked read-only;
    transforms always return a new buffer.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"ImageBuffer needs shape (H, W, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("ImageBuffer needs width and height >= 1")
        if not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ValueError("ImageBuffer intensities must lie in [0, 1]")
        arr.setflags(write=False)
        self.data = arr

    @classmethod
    def zeros(cls, width: int, height: int) -> "ImageBuffer":
        return cls(np.zeros((height, width, 3)))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 3

    def to_bytes(self) -> bytes:
        return quantize(self.data).tobytes()

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"ImageBuffer({self.width}x{self.height})"


def quantize(data: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def _from_bytes(raw: np.ndarray, width: int, height: int) -> ImageBuffer:
    return ImageBuffer(raw.reshape(height, width, 3).astype(np.float64) / 255.0)


# -- PPM -----------------------------------------------------------------

def _ppm_tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last one.
    """
    tokens = []
    pos = 0
    n = len(blob)
    while len(tokens) < count:
        while pos < n and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < n and blob[pos:pos + 1] == b"#":
            while pos < n and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not blob[pos:pos + 1].isspace() and blob[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedHeader("PPM header ended early")
        tokens.append(blob[start:pos])
    if pos >= n or not blob[pos:pos + 1].isspace():
        raise MalformedHeader("PPM header must end with a single whitespace byte")
    return tokens, pos


def decode_ppm(blob: bytes) -> ImageBuffer:
    if not blob.startswith(b"P6"):
        raise MalformedHeader("not a binary PPM (missing P6 magic)")
    tokens, pos = _ppm_tokens(blob, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise MalformedHeader(f"non-integer PPM header field: {tokens[1:]}") from exc
    if width < 1 or height < 1:
        raise MalformedHeader(f"bad PPM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxval(f"maxval {maxval} not supported (only 255)")
    payload = blob[pos + 1:]
    need = width * height * 3
    if len(payload) < need:
        raise TruncatedPayload(f"expected {need} payload bytes, got {len(payload)}")
    return _from_bytes(np.frombuffer(payload[:need], dtype=np.uint8), width, height)


def encode_ppm(img: ImageBuffer) -> bytes:
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.to_bytes()


# -- PNG (8-bit RGB, non-interlaced) ----------------------------------------

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _chunk(kind: bytes, body: bytes) -> bytes:
    crc = zlib.crc32(kind + body) & 0xFFFFFFFF
    return struct.pack(">I", len(body)) + kind + body + struct.pack(">I", crc)


def encode_png(img: ImageBuffer) -> bytes:
    raw = quantize(img.data).reshape(img.height, img.width * 3)
    # filter type 0 on every scanline
    lines = np.hstack([np.zeros((img.height, 1), dtype=np.uint8), raw])
    ihdr = struct.pack(">IIBBBBB", img.width, img.height, 8, 2, 0, 0, 0)
    return (_PNG_SIG + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(lines.tobytes(), 9))
            + _chunk(b"IEND", b""))


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def decode_png(blob: bytes) -> ImageBuffer:
    if not blob.startswith(_PNG_SIG):
        raise MalformedHeader("missing PNG signature")
    pos = len(_PNG_SIG)
    header = None
    idat = bytearray()
    while pos + 8 <= len(blob):
        length, kind = struct.unpack(">I4s", blob[pos:pos + 8])
        body = blob[pos + 8:pos + 8 + length]
        if len(body) < length:
            raise TruncatedPayload(f"PNG chunk {kind!r} truncated")
        if kind == b"IHDR":
            header = struct.unpack(">IIBBBBB", body)
        elif kind == b"IDAT":
            idat += body
        elif kind == b"IEND":
            break
        pos += 12 + length
    if header is None:
        raise MalformedHeader("PNG has no IHDR chunk")
    width, height, depth, color, _, _, interlace = header
    if depth != 8 or color != 2 or interlace != 0:
        raise UnsupportedFormat("only 8-bit non-interlaced RGB PNG is supported")
    try:
        data = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise TruncatedPayload(f"PNG image data is corrupt: {exc}") from exc
    stride = width * 3
    if len(data) < height * (stride + 1):
        raise TruncatedPayload("PNG image data shorter than declared size")
    out = np.zeros((height, stride), dtype=np.int64)
    prev = np.zeros(stride, dtype=np.int64)
    for y in range(height):
        line = data[y * (stride + 1):(y + 1) * (stride + 1)]
        ftype, row = line[0], np.frombuffer(line[1:], dtype=np.uint8).astype(np.int64)
        if ftype == 0:
            cur = row
        elif ftype == 2:
            cur = (row + prev) & 0xFF
        else:
            cur = np.zeros(stride, dtype=np.int64)
            for i in range(stride):
                a = cur[i - 3] if i >= 3 else 0
                b = prev[i]
                c = prev[i - 3] if i >= 3 else 0
                if ftype == 1:
                    pred = a
                elif ftype == 3:
                    pred = (a + b) >> 1
                elif ftype == 4:
                    pred = _paeth(a, b, c)
                else:
                    raise MalformedHeader(f"unknown PNG filter type {ftype}")
                cur[i] = (row[i] + pred) & 0xFF
        out[y] = cur
        prev = cur
    return _from_bytes(out.astype(np.uint8), width, height)


def read_image(path: str | os.PathLike) -> ImageBuffer:
    blob = Path(path).read_bytes()
    if blob.startswith(_PNG_SIG):
        return decode_png(blob)
    return decode_ppm(blob)


def write_image(img: ImageBuffer, path: str | os.PathLike) -> None:
    """Write ``img`` as PNG if the suffix is ``.png``, else as binary PPM."""
    path = Path(path)
    blob = encode_png(img) if path.suffix.lower() == ".png" else encode_ppm(img)
    path.write_bytes(blob)
