"""Framed binary request/response protocol on raw byte streams.

Frame layout (little-endian):
  request:  magic "HPNPDNZ1", u32 width, u32 height, f32 sigma,
            then width*height f32 pixels, row-major, on the [0, 255] scale
  response: magic "HPNPDNR1", u32 width, u32 height, then the pixels

One response per request, flushed immediately; a reader returning None means
clean end-of-stream before any frame byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

REQUEST_MAGIC = b"HPNPDNZ1"
RESPONSE_MAGIC = b"HPNPDNR1"
_REQ_HEADER = struct.Struct("<8sIIf")
_RESP_HEADER = struct.Struct("<8sII")


class ProtocolError(Exception):
    """Malformed or truncated frame."""


@dataclass(frozen=True)
class Request:
    sigma: float
    pixels: np.ndarray  # (height, width) float32

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def _read_exact(stream: BinaryIO, count: int) -> bytes | None:
    data = b""
    while len(data) < count:
        chunk = stream.read(count - len(data))
        if not chunk:
            return None if not data else data
        data += chunk
    return data


def read_request(stream: BinaryIO) -> Request | None:
    """Read one framed request; None on clean EOF before the frame starts."""
    header = _read_exact(stream, _REQ_HEADER.size)
    if header is None:
        return None
    if len(header) < _REQ_HEADER.size:
        raise ProtocolError(f"truncated request header ({len(header)} bytes)")
    magic, width, height, sigma = _REQ_HEADER.unpack(header)
    if magic != REQUEST_MAGIC:
        raise ProtocolError(f"bad request magic {magic!r}")
    if width == 0 or height == 0:
        raise ProtocolError(f"empty frame {width}x{height}")
    if sigma < 0 or not np.isfinite(sigma):
        raise ProtocolError(f"invalid sigma {sigma}")
    count = width * height * 4
    payload = _read_exact(stream, count)
    if payload is None or len(payload) < count:
        got = 0 if payload is None else len(payload)
        raise ProtocolError(f"truncated request payload ({got}/{count} bytes)")
    pixels = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return Request(sigma=float(sigma), pixels=pixels)


def write_response(stream: BinaryIO, pixels: np.ndarray) -> None:
    """Write one framed response and flush."""
    height, width = pixels.shape
    stream.write(_RESP_HEADER.pack(RESPONSE_MAGIC, width, height))
    stream.write(np.ascontiguousarray(pixels, dtype="<f4").tobytes())
    stream.flush()
