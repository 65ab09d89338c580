"""Overlapping patch grid, windowed KNN grouping, and weighted patch aggregation.

The group index realizes the patch-selection operator: for each reference patch
on the stride grid it records the coordinates of the most similar patches inside
a search window, and aggregation realizes the transpose (scatter-add) together
with the per-pixel coverage counts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .image import Image


@dataclass(frozen=True)
class PatchGeometry:
    patch_side: int = 7
    stride: int = 4
    group_size: int = 60
    window: int = 20

    def __post_init__(self) -> None:
        if self.patch_side < 1 or self.stride < 1 or self.group_size < 1:
            raise ValueError("patch_side, stride and group_size must be >= 1")
        if self.patch_side > self.window:
            raise ValueError(
                f"patch_side {self.patch_side} exceeds search window {self.window}"
            )
        if self.stride > self.patch_side:
            # larger strides would leave pixels no reference patch covers
            raise ValueError(
                f"stride {self.stride} exceeds patch_side {self.patch_side}"
            )

    @property
    def patch_pixels(self) -> int:
        return self.patch_side * self.patch_side


@dataclass(frozen=True)
class PatchGroupIndex:
    """Reference coordinates and, per reference, its group's patch coordinates.

    neighbors[i, 0] is always refs[i]; all coordinates are patch top-left
    corners inside the image.
    """

    height: int
    width: int
    patch_side: int
    refs: np.ndarray  # (n, 2) int64
    neighbors: np.ndarray  # (n, group_size, 2) int64

    @property
    def n_groups(self) -> int:
        return self.refs.shape[0]

    @property
    def group_size(self) -> int:
        return self.neighbors.shape[1]


@dataclass(frozen=True)
class GroupMatrix:
    """Patch group as a (patch_pixels x group_size) matrix, one patch per column."""

    data: np.ndarray

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


def grid_positions(extent: int, patch_side: int, stride: int) -> np.ndarray:
    """Stride-grid top-left positions, with the last position clamped to the
    border so every pixel is covered by at least one patch."""
    last = extent - patch_side
    pos = list(range(0, last + 1, stride))
    if pos[-1] != last:
        pos.append(last)
    return np.asarray(pos, dtype=np.int64)


def build_group_index(img: Image, geom: PatchGeometry) -> PatchGroupIndex:
    """Group the most similar patches inside a clamped search window.

    Candidates are ranked by squared Euclidean patch distance; ties resolve to
    the smaller row-major linear index of the candidate's top-left pixel, and
    the reference itself always comes first.
    """
    h, w = img.shape
    p = geom.patch_side
    if h < p or w < p:
        raise ValueError(f"image {img.shape} smaller than patch side {p}")
    pos_r = h - p + 1
    pos_c = w - p + 1
    win_r = min(geom.window, pos_r)
    win_c = min(geom.window, pos_c)
    if geom.group_size > win_r * win_c:
        raise ValueError(
            f"group_size {geom.group_size} exceeds the {win_r}x{win_c} candidates "
            "available per window; shrink group_size or grow the window"
        )
    rows = grid_positions(h, p, geom.stride)
    cols = grid_positions(w, p, geom.stride)
    view = sliding_window_view(img.data, (p, p))
    half = geom.window // 2

    n = rows.size * cols.size
    m = geom.group_size
    refs = np.empty((n, 2), dtype=np.int64)
    neighbors = np.empty((n, m, 2), dtype=np.int64)
    i = 0
    for r in rows:
        r0 = min(max(r - half, 0), pos_r - win_r)
        for c in cols:
            c0 = min(max(c - half, 0), pos_c - win_c)
            cand = view[r0 : r0 + win_r, c0 : c0 + win_c]
            diff = cand - view[r, c]
            dist = np.einsum("ijkl,ijkl->ij", diff, diff).ravel()
            # the self-match distance is exactly 0; -inf pins the reference first
            dist[(r - r0) * win_c + (c - c0)] = -np.inf
            best = np.argsort(dist, kind="stable")[:m]
            refs[i] = (r, c)
            neighbors[i, :, 0] = r0 + best // win_c
            neighbors[i, :, 1] = c0 + best % win_c
            i += 1
    return PatchGroupIndex(h, w, p, refs, neighbors)


def extract_group(img: Image, index: PatchGroupIndex, i: int) -> GroupMatrix:
    """Assemble group i; each patch is vectorized row-major into one column."""
    if not 0 <= i < index.n_groups:
        raise IndexError(f"group id {i} out of range [0, {index.n_groups})")
    p = index.patch_side
    cols = [img.data[r : r + p, c : c + p].ravel() for r, c in index.neighbors[i]]
    return GroupMatrix(np.stack(cols, axis=1))


def extract_all(img: Image, index: PatchGroupIndex) -> np.ndarray:
    """All groups at once, shape (n_groups, patch_pixels, group_size)."""
    p = index.patch_side
    view = sliding_window_view(img.data, (p, p))
    gathered = view[index.neighbors[..., 0], index.neighbors[..., 1]]
    n, m = index.neighbors.shape[:2]
    return gathered.reshape(n, m, p * p).transpose(0, 2, 1)


def _flat_targets(index: PatchGroupIndex) -> np.ndarray:
    """Flat pixel index hit by each (group, column, patch-pixel) triple.

    Raveled in group -> column -> row-major-pixel order, which defines the
    sequential scatter-add summation order.
    """
    p = index.patch_side
    w = index.width
    dr, dc = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    offsets = (dr * w + dc).ravel()
    base = index.neighbors[..., 0] * w + index.neighbors[..., 1]  # (n, m)
    return (base[:, :, None] + offsets[None, None, :]).ravel()


def coverage(index: PatchGroupIndex) -> np.ndarray:
    """Per-pixel count of covering (group, column) pairs."""
    counts = np.bincount(_flat_targets(index), minlength=index.height * index.width)
    return counts.astype(np.float64).reshape(index.height, index.width)


def aggregate(
    groups: Sequence[GroupMatrix] | np.ndarray,
    index: PatchGroupIndex,
    shape: tuple[int, int],
    workers: int = 1,
) -> tuple[Image, np.ndarray]:
    """Scatter-add all group columns back onto the pixel grid.

    Returns the sum image and the coverage count map. With workers == 1 the
    summation order equals the sequential group/column/pixel scatter-add;
    workers > 1 merges per-chunk partial sums (order differs only in float
    rounding).
    """
    if shape != (index.height, index.width):
        raise ValueError(f"shape {shape} does not match index {index.height, index.width}")
    if isinstance(groups, np.ndarray):
        stack = groups
    else:
        if len(groups) != index.n_groups:
            raise ValueError(f"got {len(groups)} groups, index holds {index.n_groups}")
        stack = np.stack([g.data for g in groups])
    if stack.shape != (index.n_groups, index.patch_side**2, index.group_size):
        raise ValueError(f"group stack has shape {stack.shape}, inconsistent with index")

    npix = index.height * index.width
    targets = _flat_targets(index)
    # reorder (n, pixels, columns) to match the group -> column -> pixel targets
    values = stack.transpose(0, 2, 1).reshape(index.n_groups, -1)
    if workers <= 1:
        sums = np.bincount(targets, weights=values.ravel(), minlength=npix)
    else:
        bounds = np.linspace(0, index.n_groups, workers + 1, dtype=int)
        per_group = values.shape[1]

        def partial(lo: int, hi: int) -> np.ndarray:
            return np.bincount(
                targets[lo * per_group : hi * per_group],
                weights=np.ascontiguousarray(values[lo:hi]).ravel(),
                minlength=npix,
            )

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(partial, bounds[:-1], bounds[1:]))
        sums = np.sum(parts, axis=0)
    counts = np.bincount(targets, minlength=npix).astype(np.float64)
    return Image(sums.reshape(shape)), counts.reshape(shape)
