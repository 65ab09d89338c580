"""Block-based compressive measurement operator, its adjoint, and the initial estimate.

One shared row-orthonormal Gaussian projection is applied independently to every
non-overlapping block of the image. The projection is fully determined by
(seed, block_size, ratio); the generator is numpy's PCG64, a documented 64-bit
algorithm with a stable stream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .image import Image

MEAS_MAGIC = b"HPNPMEAS"
_HEADER = struct.Struct("<8sIIIIQ")  # magic, block_size, m_rows, blocks_y, blocks_x, seed


class MeasurementFileError(Exception):
    """Measurement file is malformed or inconsistent."""


@dataclass(frozen=True)
class BlockSensor:
    """Per-block projection with cached normal operator.

    `matrix` has orthonormal rows (m_rows x block_size^2); `gram` caches
    matrix.T @ matrix so the solver never re-forms it.
    """

    block_size: int
    ratio: float
    seed: int
    matrix: np.ndarray
    gram: np.ndarray

    @property
    def m_rows(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class Measurements:
    """Per-block measurement vectors, shape (blocks_y, blocks_x, m_rows)."""

    block_size: int
    seed: int
    data: np.ndarray

    @property
    def blocks_y(self) -> int:
        return self.data.shape[0]

    @property
    def blocks_x(self) -> int:
        return self.data.shape[1]

    @property
    def m_rows(self) -> int:
        return self.data.shape[2]


def make_sensor(block_size: int, ratio: float, seed: int) -> BlockSensor:
    """Draw a seeded Gaussian matrix and orthonormalize its rows via QR.

    m_rows = round(ratio * block_size^2). Row-orthonormality makes the
    blockwise normal operator a projector, so full sampling inverts exactly
    and gradient steps are well conditioned.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    if block_size < 2:
        raise ValueError(f"block_size must be >= 2, got {block_size}")
    n = block_size * block_size
    m = int(round(ratio * n))
    m = max(1, min(m, n))
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = rng.standard_normal((n, m))
    q, r = np.linalg.qr(draws)
    # fix the QR sign ambiguity so the matrix is canonical for a given seed
    q = q * np.where(np.diag(r) >= 0.0, 1.0, -1.0)
    matrix = np.ascontiguousarray(q.T)
    gram = matrix.T @ matrix
    return BlockSensor(block_size, float(ratio), int(seed), matrix, gram)


def _to_blocks(data: np.ndarray, b: int) -> np.ndarray:
    """(H, W) -> (blocks_y, blocks_x, b*b) with row-major vectorized blocks."""
    h, w = data.shape
    by, bx = h // b, w // b
    return data.reshape(by, b, bx, b).transpose(0, 2, 1, 3).reshape(by, bx, b * b)


def _from_blocks(vecs: np.ndarray, b: int) -> np.ndarray:
    by, bx = vecs.shape[:2]
    return vecs.reshape(by, bx, b, b).transpose(0, 2, 1, 3).reshape(by * b, bx * b)


def measure(sensor: BlockSensor, img: Image) -> Measurements:
    """Project every non-overlapping block: y_j = matrix @ vec(block_j)."""
    b = sensor.block_size
    if img.height % b or img.width % b:
        raise ValueError(f"image {img.shape} not divisible into {b}x{b} blocks")
    return Measurements(b, sensor.seed, _measure_array(sensor, img.data))


def _measure_array(sensor: BlockSensor, data: np.ndarray) -> np.ndarray:
    return _to_blocks(data, sensor.block_size) @ sensor.matrix.T


def adjoint(sensor: BlockSensor, meas: Measurements) -> Image:
    """Back-project measurements: block_j = matrix.T @ y_j."""
    _check_geometry(sensor, meas)
    return Image(_adjoint_array(sensor, meas.data))


def _adjoint_array(sensor: BlockSensor, data: np.ndarray) -> np.ndarray:
    return _from_blocks(data @ sensor.matrix, sensor.block_size)


def normal_apply(sensor: BlockSensor, data: np.ndarray) -> np.ndarray:
    """Blockwise matrix.T @ matrix @ x using the cached gram, as a raw array."""
    b = sensor.block_size
    return _from_blocks(_to_blocks(data, b) @ sensor.gram, b)


def _check_geometry(sensor: BlockSensor, meas: Measurements) -> None:
    if meas.block_size != sensor.block_size or meas.m_rows != sensor.m_rows:
        raise ValueError(
            f"geometry mismatch: sensor block={sensor.block_size} m={sensor.m_rows}, "
            f"measurements block={meas.block_size} m={meas.m_rows}"
        )


def initial_estimate(sensor: BlockSensor, meas: Measurements, smoothing_iters: int = 8) -> Image:
    """Back-projection refined by smoothed, projected Landweber rounds.

    Each round applies x <- x + adjoint(y - measure(x)), a 3x3 Gaussian
    smoothing (sigma 0.8, reflected borders), and a clamp to [0, 255].
    With smoothing_iters = 0 this is exactly the adjoint.
    """
    _check_geometry(sensor, meas)
    x = _adjoint_array(sensor, meas.data)
    for _ in range(smoothing_iters):
        x = x + _adjoint_array(sensor, meas.data - _measure_array(sensor, x))
        # truncate=1.0 keeps the kernel at one-pixel radius, i.e. 3x3
        x = gaussian_filter(x, sigma=0.8, mode="reflect", truncate=1.0)
        np.clip(x, 0.0, 255.0, out=x)
    return Image(x)


def save_measurements(meas: Measurements, path: str | Path) -> None:
    """Write the flat binary measurement file (little-endian f64 payload)."""
    header = _HEADER.pack(
        MEAS_MAGIC, meas.block_size, meas.m_rows, meas.blocks_y, meas.blocks_x, meas.seed
    )
    payload = np.ascontiguousarray(meas.data, dtype="<f8").tobytes()
    Path(path).write_bytes(header + payload)


def load_measurements(path: str | Path) -> Measurements:
    """Read a measurement file written by save_measurements."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise MeasurementFileError(f"{path}: file shorter than header")
    magic, block_size, m_rows, blocks_y, blocks_x, seed = _HEADER.unpack_from(raw)
    if magic != MEAS_MAGIC:
        raise MeasurementFileError(f"{path}: bad magic {magic!r}, expected {MEAS_MAGIC!r}")
    count = blocks_y * blocks_x * m_rows
    payload = raw[_HEADER.size :]
    if len(payload) != count * 8:
        raise MeasurementFileError(
            f"{path}: payload holds {len(payload)} bytes, expected {count * 8}"
        )
    data = np.frombuffer(payload, dtype="<f8").reshape(blocks_y, blocks_x, m_rows)
    return Measurements(block_size, seed, data.astype(np.float64))


def sensor_for_measurements(meas: Measurements) -> BlockSensor:
    """Rebuild the sensor implied by a measurement file header."""
    n = meas.block_size * meas.block_size
    return make_sensor(meas.block_size, meas.m_rows / n, meas.seed)
