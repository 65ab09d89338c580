"""Outer reconstruction loop: alternate the low-rank pass with ADMM image updates.

Each outer iteration regroups patches on the current estimate, shrinks every
group, then runs a short ADMM splitting whose x-step is plain gradient descent
on the quadratic objective, whose z-step is the plug-in denoiser at strength
sqrt(rho/tau), and whose dual step accumulates the x-z residual.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .denoise import NATIVE, DenoiserKind, open_denoiser
from .image import Image, psnr
from .lowrank import LowRankStack, WnnmParams, lowrank_pass
from .patches import PatchGeometry, build_group_index
from .sensing import BlockSensor, Measurements, _adjoint_array, initial_estimate, normal_apply


class SolverError(RuntimeError):
    """Reconstruction aborted; message names the iteration and phase."""


@dataclass(frozen=True)
class SolverConfig:
    """All scalars of the objective and the loop schedule.

    mu couples the low-rank prior, lam weighs the rank penalty (their ratio is
    the shrinkage threshold), rho weighs the plug-in prior and tau is the ADMM
    penalty, so the denoiser runs at sigma = sqrt(rho/tau). noise_sigma0 decays
    by noise_decay each outer iteration and feeds the shrinkage weights.
    """

    mu: float = 0.01
    lam: float = 1.0
    rho: float = 0.0
    tau: float = 0.1
    eta: float = 1.0
    max_iters: int = 60
    stop_tol: float = 0.0
    admm_rounds: int = 1
    grad_steps: int = 2
    regroup_every: int = 1
    noise_sigma0: float = 0.0
    noise_decay: float = 0.95
    c_weight: float = 2.0 * math.sqrt(2.0)
    init_smoothing: int = 8
    geometry: PatchGeometry = field(default_factory=PatchGeometry)
    denoiser: DenoiserKind = NATIVE

    def __post_init__(self) -> None:
        for name in ("mu", "lam", "rho", "tau", "noise_sigma0"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.rho > 0.0 and self.tau <= 0.0:
            raise ValueError("tau must be > 0 when rho > 0 (denoiser sigma must be finite)")
        if self.eta <= 0.0:
            raise ValueError("eta must be > 0")
        if self.max_iters < 1 or self.admm_rounds < 1 or self.grad_steps < 1:
            raise ValueError("max_iters, admm_rounds and grad_steps must be >= 1")
        if self.regroup_every < 1:
            raise ValueError("regroup_every must be >= 1")

    @property
    def denoiser_sigma(self) -> float:
        return math.sqrt(self.rho / self.tau) if self.rho > 0.0 else 0.0

    def shrink_params(self, iteration: int) -> WnnmParams:
        """Shrinkage parameters for outer iteration k (1-based)."""
        theta = self.lam / self.mu if self.mu > 0.0 else 0.0
        floor = self.noise_sigma0 * self.noise_decay ** (iteration - 1)
        return WnnmParams(theta=theta, c_weight=self.c_weight, noise_floor=floor)


@dataclass
class IterationRecord:
    iteration: int
    relative_change: float
    psnr: float | None
    seconds_group: float
    seconds_lowrank: float
    seconds_admm: float

    def as_json(self) -> str:
        return json.dumps(
            {
                "iteration": self.iteration,
                "relative_change": self.relative_change,
                "psnr": self.psnr,
                "seconds_group": self.seconds_group,
                "seconds_lowrank": self.seconds_lowrank,
                "seconds_admm": self.seconds_admm,
            }
        )


@dataclass
class SolverState:
    x: Image
    z: Image
    c: Image
    k: int = 0
    history: list[IterationRecord] = field(default_factory=list)
    lowrank_passes: int = 0
    regroupings: int = 0
    admm_rounds_run: int = 0
    grad_evals: int = 0
    denoiser_calls: int = 0


def gradient(
    x: Image,
    sensor: BlockSensor,
    meas: Measurements,
    lr: LowRankStack | None,
    z: Image,
    c: Image,
    cfg: SolverConfig,
) -> Image:
    """Gradient of the quadratic objective at x.

    q = (normal op)(x) - adjoint(y) + tau*(x - z - c)
        + mu*(coverage * x - scattered low-rank sum).
    """
    if x.shape != z.shape or x.shape != c.shape:
        raise ValueError(f"shape mismatch between x {x.shape}, z {z.shape}, c {c.shape}")
    q = normal_apply(sensor, x.data) - _adjoint_array(sensor, meas.data)
    if cfg.tau > 0.0:
        q += cfg.tau * (x.data - z.data - c.data)
    if cfg.mu > 0.0:
        if lr is None:
            raise ValueError("mu > 0 requires a low-rank stack")
        q += cfg.mu * (lr.coverage * x.data - lr.sum_image.data)
    return Image(q)


def x_update(
    x: Image,
    sensor: BlockSensor,
    meas: Measurements,
    lr: LowRankStack | None,
    z: Image,
    c: Image,
    cfg: SolverConfig,
) -> Image:
    """grad_steps rounds of x <- x - eta*q with the gradient recomputed each step."""
    for _ in range(cfg.grad_steps):
        q = gradient(x, sensor, meas, lr, z, c, cfg)
        x = Image(x.data - cfg.eta * q.data)
    return x


def z_update(x: Image, c: Image, cfg: SolverConfig, denoiser) -> Image:
    """Denoise the proxy r = x - c at strength sqrt(rho/tau)."""
    r = Image(x.data - c.data)
    return denoiser.denoise(r, cfg.denoiser_sigma)


def dual_update(c: Image, x: Image, z: Image) -> Image:
    """c <- c - (x - z)."""
    if c.shape != x.shape or c.shape != z.shape:
        raise ValueError("shape mismatch in dual update")
    return Image(c.data - (x.data - z.data))


def relative_change(current: Image, previous: Image) -> float:
    """||current - previous||_2^2 / ||previous||_2^2 (stopping quantity)."""
    num = float(np.sum((current.data - previous.data) ** 2))
    den = float(np.sum(previous.data**2))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def _lipschitz_warning(cfg: SolverConfig, coverage_max: float) -> None:
    bound = 1.0 + cfg.tau + cfg.mu * coverage_max
    if cfg.eta > 1.0 / bound:
        warnings.warn(
            f"step size eta={cfg.eta} exceeds 1/L={1.0 / bound:.4g} "
            f"(L = 1 + tau + mu*max coverage); gradient steps may overshoot",
            RuntimeWarning,
            stacklevel=3,
        )


def reconstruct(
    sensor: BlockSensor,
    meas: Measurements,
    cfg: SolverConfig,
    ground_truth: Image | None = None,
    history_path: str | Path | None = None,
    on_iteration: Callable[[int, Image], None] | None = None,
) -> tuple[Image, SolverState]:
    """Run the full reconstruction loop; returns the clamped image and state.

    When ground_truth is given, PSNR of the clamped running iterate is recorded
    every iteration. history_path, when set, receives one JSON line per outer
    iteration. on_iteration is called with (k, current unclamped iterate) after
    each outer iteration, for instrumentation.
    """
    if ground_truth is not None:
        expected = (meas.blocks_y * sensor.block_size, meas.blocks_x * sensor.block_size)
        if ground_truth.shape != expected:
            raise ValueError(f"ground truth shape {ground_truth.shape}, expected {expected}")

    x = initial_estimate(sensor, meas, cfg.init_smoothing)
    state = SolverState(x=x, z=x, c=Image(np.zeros(x.shape)))
    history_file = open(history_path, "w") if history_path is not None else None
    denoiser = None
    index = None
    lr: LowRankStack | None = None
    warned = False
    try:
        denoiser = open_denoiser(cfg.denoiser)
        x_prev = x
        for k in range(1, cfg.max_iters + 1):
            state.k = k
            t0 = time.perf_counter()
            if cfg.mu > 0.0 and (index is None or (k - 1) % cfg.regroup_every == 0):
                with _phase(k, "patch grouping"):
                    index = build_group_index(x, cfg.geometry)
                state.regroupings += 1
            t1 = time.perf_counter()
            if cfg.mu > 0.0:
                with _phase(k, "low-rank shrinkage"):
                    lr = lowrank_pass(x, index, cfg.shrink_params(k))
                state.lowrank_passes += 1
                if not warned:
                    _lipschitz_warning(cfg, float(lr.coverage.max()))
                    warned = True
            t2 = time.perf_counter()
            with _phase(k, "ADMM update"):
                c = Image(np.zeros(x.shape))
                z = x
                for _ in range(cfg.admm_rounds):
                    x = x_update(x, sensor, meas, lr, z, c, cfg)
                    state.grad_evals += cfg.grad_steps
                    z = z_update(x, c, cfg, denoiser)
                    if cfg.denoiser_sigma > 0.0:
                        state.denoiser_calls += 1
                    c = dual_update(c, x, z)
                    state.admm_rounds_run += 1
            t3 = time.perf_counter()

            rel = relative_change(x, x_prev)
            quality = psnr(ground_truth, x.clamped()) if ground_truth is not None else None
            record = IterationRecord(
                iteration=k,
                relative_change=rel,
                psnr=quality,
                seconds_group=t1 - t0,
                seconds_lowrank=t2 - t1,
                seconds_admm=t3 - t2,
            )
            state.history.append(record)
            state.x, state.z, state.c = x, z, c
            if history_file is not None:
                history_file.write(record.as_json() + "\n")
            if on_iteration is not None:
                on_iteration(k, x)
            if rel < cfg.stop_tol:
                break
            x_prev = x
    finally:
        if denoiser is not None:
            denoiser.close()
        if history_file is not None:
            history_file.close()
    final = state.x.clamped()
    state.x = final
    return final, state


@contextmanager
def _phase(iteration: int, phase: str):
    try:
        yield
    except SolverError:
        raise
    except Exception as exc:
        raise SolverError(f"iteration {iteration}, phase {phase}: {exc}") from exc
