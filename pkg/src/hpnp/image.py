"""Grayscale image container, PGM/PNG file I/O, and the PSNR quality metric."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ImageIOError(Exception):
    """Base class for image file problems."""


class UnsupportedFormatError(ImageIOError):
    """File is not binary PGM (P5) or PNG."""


class UnsupportedDepthError(ImageIOError):
    """Sample depth is not 8-bit."""


class NonGrayscaleError(ImageIOError):
    """PNG carries color or palette data."""


class TruncatedFileError(ImageIOError):
    """File ends before the declared pixel payload."""


@dataclass(frozen=True)
class Image:
    """2-D intensity grid stored as float64, nominally on the [0, 255] scale.

    Values are not forced into [0, 255] so that solver iterates can live
    outside the displayable range; NaN/Inf are rejected. The pixel buffer is
    frozen after construction and safe to share across threads.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image data must be 2-D and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains NaN or Inf values")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def clamped(self) -> "Image":
        """Copy with values clipped to [0, 255]."""
        return Image(np.clip(self.data, 0.0, 255.0))


_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def load_image(path: str | Path) -> Image:
    """Load an 8-bit grayscale image from a binary PGM (P5) or PNG file.

    Integer sample values map exactly to float intensities (v -> float(v)).
    Raises UnsupportedFormatError / UnsupportedDepthError / NonGrayscaleError /
    TruncatedFileError for the corresponding contract violations.
    """
    raw = Path(path).read_bytes()
    if raw[:2] == b"P5":
        return _decode_pgm(raw)
    if raw[: len(_PNG_MAGIC)] == _PNG_MAGIC:
        return _decode_png(raw)
    raise UnsupportedFormatError(f"{path}: not a binary PGM (P5) or PNG file")


def save_image(img: Image, path: str | Path) -> None:
    """Write an image as binary PGM or PNG, chosen by file extension.

    Values are clamped to [0, 255] and rounded half-away-from-zero to the
    nearest integer before encoding.
    """
    path = Path(path)
    pixels = quantize(img)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
        path.write_bytes(header + pixels.tobytes())
    elif suffix == ".png":
        from PIL import Image as PILImage

        PILImage.fromarray(pixels, mode="L").save(path, format="PNG")
    else:
        raise UnsupportedFormatError(f"{path}: unknown extension {suffix!r}, use .pgm or .png")


def quantize(img: Image) -> np.ndarray:
    """Clamp to [0, 255] and round half-away-from-zero, returning uint8 pixels."""
    clipped = np.clip(img.data, 0.0, 255.0)
    # values are non-negative here, so floor(x + 0.5) rounds half away from zero
    return np.floor(clipped + 0.5).astype(np.uint8)


def psnr(reference: Image, test: Image) -> float:
    """Peak signal-to-noise ratio in dB against a 255 peak.

    Returns math.inf when the images are identical (zero MSE).
    Raises ValueError on dimension mismatch.
    """
    if reference.shape != test.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {test.shape}")
    diff = reference.data - test.data
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0**2 / mse)


def _decode_pgm(raw: bytes) -> Image:
    pos = 2  # past "P5"
    fields: list[int] = []
    while len(fields) < 3:
        # skip whitespace and '#' comments between header tokens
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token:
            raise TruncatedFileError("PGM header ends before width/height/maxval")
        if not token.isdigit():
            raise UnsupportedFormatError(f"malformed PGM header token {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval > 255:
        raise UnsupportedDepthError(f"unsupported depth: maxval {maxval} (only 8-bit supported)")
    if maxval < 1 or width < 1 or height < 1:
        raise UnsupportedFormatError(f"invalid PGM geometry {width}x{height} maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    payload = raw[pos : pos + width * height]
    if len(payload) < width * height:
        raise TruncatedFileError(
            f"PGM payload has {len(payload)} bytes, expected {width * height}"
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return Image(data.astype(np.float64))


def _decode_png(raw: bytes) -> Image:
    import io

    from PIL import Image as PILImage

    try:
        with PILImage.open(io.BytesIO(raw)) as pil:
            mode = pil.mode
            if mode in ("I", "I;16", "I;16B", "I;16L"):
                raise UnsupportedDepthError(f"unsupported depth: PNG mode {mode}")
            if mode != "L":
                raise NonGrayscaleError(f"PNG is not 8-bit grayscale (mode {mode})")
            data = np.asarray(pil, dtype=np.uint8)
    except ImageIOError:
        raise
    except OSError as exc:
        raise TruncatedFileError(f"PNG decode failed: {exc}") from exc
    return Image(data.astype(np.float64))
