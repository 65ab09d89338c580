"""Denoiser backends behind the adapter.

Every backend maps (pixels on [0, 255], sigma on the same scale) to pixels on
[0, 255]; rescaling to a model's native range happens inside the backend so
the wire format never changes.
"""

from __future__ import annotations

import numpy as np


class EchoModel:
    """Identity backend for protocol testing; needs no model assets."""

    name = "echo"

    def denoise(self, pixels: np.ndarray, sigma: float) -> np.ndarray:
        return pixels


class NlMeansModel:
    """Non-local means tuned by the requested noise level (scikit-image)."""

    name = "nlm"

    def __init__(self, patch_size: int = 5, patch_distance: int = 7, strength: float = 0.8):
        self.patch_size = patch_size
        self.patch_distance = patch_distance
        self.strength = strength

    def denoise(self, pixels: np.ndarray, sigma: float) -> np.ndarray:
        from skimage.restoration import denoise_nl_means

        scaled = pixels.astype(np.float64) / 255.0
        noise = sigma / 255.0
        out = denoise_nl_means(
            scaled,
            h=max(self.strength * noise, 1e-6),
            sigma=noise,
            patch_size=self.patch_size,
            patch_distance=self.patch_distance,
            fast_mode=True,
        )
        return np.clip(out * 255.0, 0.0, 255.0).astype(np.float32)


class TvModel:
    """Total-variation proximal denoiser with noise-proportional weight."""

    name = "tv"

    def __init__(self, strength: float = 0.5):
        self.strength = strength

    def denoise(self, pixels: np.ndarray, sigma: float) -> np.ndarray:
        from skimage.restoration import denoise_tv_chambolle

        scaled = pixels.astype(np.float64) / 255.0
        # the solver divides by the weight internally, so keep it positive
        weight = max(self.strength * sigma / 255.0, 1e-8)
        out = denoise_tv_chambolle(scaled, weight=weight)
        return np.clip(out * 255.0, 0.0, 255.0).astype(np.float32)


class TorchscriptModel:
    """A scripted torch module taking (image[1,1,H,W] on [0,1], sigma[1]) on [0,1]."""

    def __init__(self, weights: str, device: str = "cpu"):
        import torch

        self._torch = torch
        self.device = device
        self.module = torch.jit.load(weights, map_location=device).eval()
        self.name = f"torchscript:{weights}"

    def denoise(self, pixels: np.ndarray, sigma: float) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            image = torch.from_numpy(pixels.astype(np.float32) / 255.0)
            image = image.unsqueeze(0).unsqueeze(0).to(self.device)
            level = torch.tensor([sigma / 255.0], device=self.device)
            out = self.module(image, level).squeeze(0).squeeze(0).cpu().numpy()
        return np.clip(out * 255.0, 0.0, 255.0).astype(np.float32)


class SlidingDctModel:
    """Dense sliding-window DCT hard thresholding with sparsity-adaptive weights.

    Larger windows and denser strides than quick hard-threshold denoisers, and
    each window is aggregated with weight 1/(1 + kept coefficients), so flat
    (sparse) windows dominate their noisy neighbours.
    """

    name = "dct16"

    def __init__(self, strength: float = 2.7, window: int = 16, stride: int = 2):
        self.strength = strength
        self.window = window
        self.stride = stride

    def denoise(self, pixels: np.ndarray, sigma: float) -> np.ndarray:
        import scipy.fft

        data = pixels.astype(np.float64)
        h, w = data.shape
        win = min(self.window, h, w)
        rows = list(range(0, h - win + 1, self.stride))
        cols = list(range(0, w - win + 1, self.stride))
        if rows[-1] != h - win:
            rows.append(h - win)
        if cols[-1] != w - win:
            cols.append(w - win)
        view = np.lib.stride_tricks.sliding_window_view(data, (win, win))
        tiles = view[np.asarray(rows)[:, None], np.asarray(cols)[None, :]]
        coefs = scipy.fft.dctn(tiles, axes=(-2, -1), norm="ortho")
        kill = np.abs(coefs) < self.strength * sigma
        kill[..., 0, 0] = False
        kept = (~kill).sum(axis=(-2, -1))
        coefs[kill] = 0.0
        tiles = scipy.fft.idctn(coefs, axes=(-2, -1), norm="ortho")
        weights = 1.0 / (1.0 + kept.astype(np.float64))

        offsets = (np.arange(win)[:, None] * w + np.arange(win)[None, :]).ravel()
        base = (np.asarray(rows)[:, None] * w + np.asarray(cols)[None, :]).ravel()
        targets = (base[:, None] + offsets[None, :]).ravel()
        tile_values = (tiles * weights[..., None, None]).reshape(-1, win * win)
        tile_weights = np.broadcast_to(
            weights.reshape(-1)[:, None], tile_values.shape
        )
        out = np.bincount(targets, weights=tile_values.ravel(), minlength=h * w)
        norm = np.bincount(targets, weights=tile_weights.ravel(), minlength=h * w)
        result = (out / norm).reshape(h, w)
        return np.clip(result, 0.0, 255.0).astype(np.float32)


_CLASSICAL = {"nlm": NlMeansModel, "tv": TvModel, "dct16": SlidingDctModel}


def build_model(
    echo: bool, model: str, weights: str | None, device: str, strength: float | None = None
):
    if echo:
        return EchoModel()
    if weights:
        return TorchscriptModel(weights, device)
    if model not in _CLASSICAL:
        raise ValueError(f"unknown model {model!r}; choose from {sorted(_CLASSICAL)}")
    if strength is None:
        return _CLASSICAL[model]()
    return _CLASSICAL[model](strength=strength)
