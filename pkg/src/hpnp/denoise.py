"""Plug-in Gaussian denoiser: native sliding-DCT thresholding and a process bridge.

The solver only sees the `denoise` entry point (or an open `DenoiserSession`);
whether the prior is the built-in DCT denoiser or an external model behind the
wire protocol is a configuration detail. External failures are hard errors:
silently swapping priors would corrupt experiment provenance.
"""

from __future__ import annotations

import os
import select
import shlex
import struct
import subprocess
import tempfile
import time
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .image import Image
from .patches import grid_positions

REQUEST_MAGIC = b"HPNPDNZ1"
RESPONSE_MAGIC = b"HPNPDNR1"
_REQ_HEADER = struct.Struct("<8sIIf")  # magic, width, height, sigma
_RESP_HEADER = struct.Struct("<8sII")  # magic, width, height


class DenoiseError(Exception):
    """Denoiser failed to produce a usable image."""


class DenoiserProtocolError(DenoiseError):
    """External denoiser broke the wire protocol (magic/shape/timeout/exit)."""


@dataclass(frozen=True)
class DenoiseRequest:
    image: Image
    sigma: float

    def __post_init__(self) -> None:
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class DenoiserKind:
    """Denoiser selection: variant 'native' or 'external' plus its command line."""

    variant: str = "native"
    command: str = ""
    timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.variant not in ("native", "external"):
            raise ValueError(f"unknown denoiser variant {self.variant!r}")
        if self.variant == "external" and not self.command.strip():
            raise ValueError("external denoiser requires a nonempty command")


NATIVE = DenoiserKind("native")


def denoise(kind: DenoiserKind, req: DenoiseRequest) -> Image:
    """Dispatch a denoise request; sigma == 0 is the identity for any variant."""
    if req.sigma == 0.0:
        return req.image
    if kind.variant == "native":
        return native_dct_denoise(req.image, req.sigma)
    return external_denoise(kind.command, req, timeout=kind.timeout)


def native_dct_denoise(
    img: Image,
    sigma: float,
    patch: int = 8,
    stride: int = 4,
    clamp: bool = True,
) -> Image:
    """Sliding-window DCT hard thresholding.

    Every patch is transformed by an orthonormal 2-D DCT; non-DC coefficients
    with magnitude below 2.7*sigma are zeroed; patches are inverse-transformed
    and averaged with uniform weights. The DC coefficient always survives, so
    constant images pass through unchanged.
    """
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    h, w = img.shape
    if h < patch or w < patch:
        # image smaller than one window: fall back to whole-image transform
        patch = min(h, w, patch)
    rows = grid_positions(h, patch, stride)
    cols = grid_positions(w, patch, stride)
    view = np.lib.stride_tricks.sliding_window_view(img.data, (patch, patch))
    tiles = view[rows[:, None], cols[None, :]]  # (nr, nc, patch, patch)
    coefs = scipy.fft.dctn(tiles, axes=(-2, -1), norm="ortho")
    kill = np.abs(coefs) < 2.7 * sigma
    kill[..., 0, 0] = False
    coefs[kill] = 0.0
    tiles = scipy.fft.idctn(coefs, axes=(-2, -1), norm="ortho")

    offsets = (np.arange(patch)[:, None] * w + np.arange(patch)[None, :]).ravel()
    base = (rows[:, None] * w + cols[None, :]).ravel()
    targets = (base[:, None] + offsets[None, :]).ravel()
    out = np.bincount(targets, weights=tiles.reshape(-1, patch * patch).ravel(), minlength=h * w)
    counts = np.bincount(targets, minlength=h * w)
    result = (out / counts).reshape(h, w)
    if clamp:
        np.clip(result, 0.0, 255.0, out=result)
    return Image(result)


def encode_request(img: Image, sigma: float) -> bytes:
    header = _REQ_HEADER.pack(REQUEST_MAGIC, img.width, img.height, float(sigma))
    return header + img.data.astype("<f4").tobytes()


def encode_response(width: int, height: int, pixels: np.ndarray) -> bytes:
    header = _RESP_HEADER.pack(RESPONSE_MAGIC, width, height)
    return header + np.asarray(pixels).astype("<f4").tobytes()


def external_denoise(command: str, req: DenoiseRequest, timeout: float = 120.0) -> Image:
    """One-shot request/response round trip against a fresh child process."""
    with ExternalDenoiser(command, timeout=timeout) as child:
        return child.denoise(req.image, req.sigma)


class NativeDenoiser:
    """Session wrapper around the built-in DCT denoiser."""

    def denoise(self, img: Image, sigma: float) -> Image:
        if sigma == 0.0:
            return img
        return native_dct_denoise(img, sigma)

    def close(self) -> None:
        pass

    def __enter__(self) -> "NativeDenoiser":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class ExternalDenoiser:
    """Persistent child process speaking the denoiser wire protocol.

    One request/response pair in flight at a time; the child is expected to
    flush after each response and exit on stdin EOF.
    """

    def __init__(self, command: str, timeout: float = 120.0):
        self.command = command
        self.timeout = timeout
        self._stderr = tempfile.TemporaryFile()
        self._proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=self._stderr,
        )

    def denoise(self, img: Image, sigma: float) -> Image:
        if sigma == 0.0:
            return img
        proc = self._proc
        if proc.poll() is not None:
            raise DenoiserProtocolError(self._diagnose("child already exited"))
        try:
            proc.stdin.write(encode_request(img, sigma))
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise DenoiserProtocolError(self._diagnose(f"write failed: {exc}")) from exc

        deadline = time.monotonic() + self.timeout
        header = self._read_exact(_RESP_HEADER.size, deadline)
        magic, width, height = _RESP_HEADER.unpack(header)
        if magic != RESPONSE_MAGIC:
            raise DenoiserProtocolError(
                self._diagnose(f"bad response magic {magic!r}, expected {RESPONSE_MAGIC!r}")
            )
        if (width, height) != (img.width, img.height):
            raise DenoiserProtocolError(
                self._diagnose(
                    f"response shape {width}x{height} does not match request "
                    f"{img.width}x{img.height}"
                )
            )
        payload = self._read_exact(width * height * 4, deadline)
        pixels = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        return Image(pixels.reshape(height, width))

    def _read_exact(self, count: int, deadline: float) -> bytes:
        fd = self._proc.stdout.fileno()
        chunks = bytearray()
        while len(chunks) < count:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._proc.kill()
                raise DenoiserProtocolError(self._diagnose("timed out waiting for response"))
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, count - len(chunks))
            if chunk == b"":
                raise DenoiserProtocolError(
                    self._diagnose(f"child closed stdout after {len(chunks)}/{count} bytes")
                )
            chunks.extend(chunk)
        return bytes(chunks)

    def _diagnose(self, message: str) -> str:
        code = self._proc.poll()
        try:
            self._stderr.seek(0)
            tail = self._stderr.read()[-2000:].decode("utf-8", "replace").strip()
        except (OSError, ValueError):
            tail = ""
        parts = [f"external denoiser {self.command!r}: {message}"]
        parts.append(f"exit code {code}" if code is not None else "still running")
        if tail:
            parts.append(f"stderr tail: {tail}")
        return "; ".join(parts)

    def close(self) -> None:
        proc = self._proc
        if proc.stdin and not proc.stdin.closed:
            try:
                proc.stdin.close()
            except OSError:
                pass
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        self._stderr.close()

    def __enter__(self) -> "ExternalDenoiser":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_denoiser(kind: DenoiserKind):
    """Open a session for the configured variant (one child per solver run)."""
    if kind.variant == "native":
        return NativeDenoiser()
    return ExternalDenoiser(kind.command, timeout=kind.timeout)
