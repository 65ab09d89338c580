"""Weighted singular-value shrinkage of patch groups: the non-local low-rank prior.

Each group matrix is replaced by the proximal point of a weighted nuclear norm,
solved in closed form through the SVD. Weights are inversely tied to a
noise-compensated singular-value estimate, so strong structure survives while
noise-level components are removed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image import Image
from .patches import GroupMatrix, PatchGroupIndex, aggregate, extract_all


@dataclass(frozen=True)
class WnnmParams:
    """Shrinkage parameters.

    theta is the effective penalty weight (rank penalty / coupling weight);
    noise_floor is the per-iteration noise proxy subtracted (in variance) from
    the observed singular values before weights are formed.
    """

    theta: float
    c_weight: float = 2.0 * math.sqrt(2.0)
    eps: float = 1e-16
    noise_floor: float = 0.0

    def __post_init__(self) -> None:
        if self.theta < 0.0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")
        if self.eps <= 0.0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.noise_floor < 0.0:
            raise ValueError(f"noise_floor must be >= 0, got {self.noise_floor}")


@dataclass(frozen=True)
class LowRankStack:
    """All shrunken groups plus their precomputed aggregation pair."""

    groups: np.ndarray  # (n, patch_pixels, group_size)
    sum_image: Image  # pixel-wise sum of scattered group columns
    coverage: np.ndarray  # per-pixel covering-pair counts


def svd(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD returning (U, singular values descending, V) with X = U S V^T."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("SVD input contains NaN or Inf")
    u, s, vh = np.linalg.svd(matrix, full_matrices=False)
    return u, s, vh.T


def shrink_weights(s: np.ndarray, group_size: int, params: WnnmParams) -> np.ndarray:
    """Per-singular-value weights c*sqrt(m) / (noise-compensated estimate + eps)."""
    s_hat = np.sqrt(np.maximum(s * s - group_size * params.noise_floor**2, 0.0))
    return params.c_weight * math.sqrt(group_size) / (s_hat + params.eps)


def _shrink_values(s: np.ndarray, group_size: int, params: WnnmParams) -> np.ndarray:
    return np.maximum(s - params.theta * shrink_weights(s, group_size, params), 0.0)


def wnnm_shrink(group: GroupMatrix, params: WnnmParams) -> GroupMatrix:
    """Closed-form weighted singular-value shrinkage of one group."""
    if params.theta == 0.0:
        # nothing shrinks; skip the SVD round trip so identity is exact
        return GroupMatrix(group.data.copy())
    u, s, v = svd(group.data)
    s_new = _shrink_values(s, group.cols, params)
    return GroupMatrix((u * s_new) @ v.T)


def lowrank_pass(img: Image, index: PatchGroupIndex, params: WnnmParams) -> LowRankStack:
    """Shrink every group of the index and aggregate the results.

    Runs one batched SVD over all groups; per-group results are identical to
    calling wnnm_shrink group by group.
    """
    stack = extract_all(img, index)
    if params.theta == 0.0:
        shrunk = stack
    else:
        u, s, vh = np.linalg.svd(stack, full_matrices=False)
        if not np.all(np.isfinite(s)):
            raise ValueError("SVD produced non-finite singular values")
        s_new = _shrink_values(s, index.group_size, params)
        shrunk = (u * s_new[:, None, :]) @ vh
    sum_image, counts = aggregate(shrunk, index, img.shape)
    return LowRankStack(shrunk, sum_image, counts)
