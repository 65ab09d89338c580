"""Command-line experiment runner: encode, decode, reconstruct, and score images.

`hpnp run` simulates block measurements for every (image, ratio) pair,
reconstructs, and writes per-run images, optional JSON-line histories, and a
CSV summary. `hpnp encode`/`hpnp decode` split the same pipeline across a
measurement file, and `hpnp psnr` scores two images.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .denoise import DenoiserKind
from .image import Image, ImageIOError, load_image, psnr, save_image
from .patches import PatchGeometry
from .sensing import (
    MeasurementFileError,
    initial_estimate,
    load_measurements,
    make_sensor,
    measure,
    save_measurements,
    sensor_for_measurements,
)
from .solver import SolverConfig, reconstruct

log = logging.getLogger("hpnp")

CSV_COLUMNS = [
    "image",
    "ratio",
    "seed",
    "preset",
    "psnr_init",
    "psnr_final",
    "iterations",
    "wall_seconds",
    "crop_top",
    "crop_left",
]

_GEOMETRY_KEYS = ("patch_side", "stride", "group_size", "window")
_SCALAR_KEYS = (
    "mu",
    "lam",
    "rho",
    "tau",
    "eta",
    "max_iters",
    "stop_tol",
    "admm_rounds",
    "grad_steps",
    "regroup_every",
    "noise_sigma0",
    "noise_decay",
    "c_weight",
    "init_smoothing",
)


def preset_dir() -> Path:
    return Path(__file__).parent / "presets"


def available_presets() -> list[str]:
    return sorted(p.stem for p in preset_dir().glob("*.toml"))


def load_preset(name: str) -> dict:
    path = preset_dir() / f"{name}.toml"
    if not path.exists():
        raise FileNotFoundError(
            f"preset {name!r} not found; available: {', '.join(available_presets())}"
        )
    with open(path, "rb") as fh:
        values = tomllib.load(fh)
    unknown = set(values) - set(_SCALAR_KEYS) - set(_GEOMETRY_KEYS)
    if unknown:
        raise ValueError(f"preset {name!r} has unknown keys: {sorted(unknown)}")
    return values


def default_preset_name(ratio: float) -> str:
    """Per-ratio preset; falls back to the nearest shipped ratio preset."""
    exact = f"r{ratio:g}"
    names = available_presets()
    if exact in names:
        return exact
    ratio_presets = [(abs(float(n[1:]) - ratio), n) for n in names if _is_ratio_preset(n)]
    if not ratio_presets:
        raise FileNotFoundError("no ratio presets installed")
    _, nearest = min(ratio_presets)
    log.warning("no preset for ratio %g, using nearest preset %s", ratio, nearest)
    return nearest


def _is_ratio_preset(name: str) -> bool:
    if not name.startswith("r"):
        return False
    try:
        float(name[1:])
        return True
    except ValueError:
        return False


def build_config(preset: dict, overrides: dict, denoiser: DenoiserKind) -> SolverConfig:
    merged = dict(preset)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    geometry = PatchGeometry(
        **{k: int(merged.pop(k)) for k in _GEOMETRY_KEYS if k in merged}
    )
    ints = {"max_iters", "admm_rounds", "grad_steps", "regroup_every", "init_smoothing"}
    kwargs = {k: (int(v) if k in ints else float(v)) for k, v in merged.items()}
    return SolverConfig(geometry=geometry, denoiser=denoiser, **kwargs)


def parse_denoiser(spec: str) -> DenoiserKind:
    if spec == "native":
        return DenoiserKind("native")
    if spec.startswith("external:"):
        return DenoiserKind("external", command=spec[len("external:") :])
    raise argparse.ArgumentTypeError(
        f"denoiser must be 'native' or 'external:CMD', got {spec!r}"
    )


def center_crop(img: Image, block: int) -> tuple[Image, int, int]:
    """Crop to the largest centered block multiple; returns (image, top, left)."""
    h = (img.height // block) * block
    w = (img.width // block) * block
    if h == 0 or w == 0:
        raise ValueError(f"image {img.shape} smaller than one {block}x{block} block")
    top = (img.height - h) // 2
    left = (img.width - w) // 2
    return Image(img.data[top : top + h, left : left + w]), top, left


@dataclass
class RunResult:
    image: str
    ratio: float
    seed: int
    preset: str
    psnr_init: float
    psnr_final: float
    iterations: int
    wall_seconds: float
    crop_top: int
    crop_left: int

    def row(self) -> list[str]:
        return [
            self.image,
            f"{self.ratio:g}",
            str(self.seed),
            self.preset,
            f"{self.psnr_init:.6f}",
            f"{self.psnr_final:.6f}",
            str(self.iterations),
            f"{self.wall_seconds:.3f}",
            str(self.crop_top),
            str(self.crop_left),
        ]


def _collect_images(paths: list[str]) -> list[Path]:
    found: list[Path] = []
    for entry in paths:
        p = Path(entry)
        if p.is_dir():
            found.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".pgm", ".png")))
        else:
            found.append(p)
    return found


def _single_run(
    path: Path,
    ratio: float,
    seed: int,
    block: int,
    preset_flag: str | None,
    overrides: dict,
    denoiser: DenoiserKind,
    out_dir: Path,
    want_history: bool,
) -> RunResult:
    original = load_image(path)
    cropped, top, left = center_crop(original, block)
    sensor = make_sensor(block, ratio, seed)
    meas = measure(sensor, cropped)
    preset_name = preset_flag or default_preset_name(ratio)
    cfg = build_config(load_preset(preset_name), overrides, denoiser)

    x0 = initial_estimate(sensor, meas, cfg.init_smoothing)
    history_path = out_dir / f"{path.stem}_r{ratio:g}.history.jsonl" if want_history else None
    t0 = time.perf_counter()
    final, state = reconstruct(
        sensor, meas, cfg, ground_truth=cropped, history_path=history_path
    )
    wall = time.perf_counter() - t0
    save_image(final, out_dir / f"{path.stem}_r{ratio:g}.png")
    return RunResult(
        image=path.name,
        ratio=ratio,
        seed=seed,
        preset=preset_name,
        psnr_init=psnr(cropped, x0.clamped()),
        psnr_final=psnr(cropped, final),
        iterations=state.k,
        wall_seconds=wall,
        crop_top=top,
        crop_left=left,
    )


def _write_summary(out_dir: Path, results: list[RunResult]) -> None:
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for res in results:
            writer.writerow(res.row())
        if results:
            mean_init = sum(r.psnr_init for r in results) / len(results)
            mean_final = sum(r.psnr_final for r in results) / len(results)
            total_wall = sum(r.wall_seconds for r in results)
            writer.writerow(
                [
                    "average",
                    "",
                    "",
                    "",
                    f"{mean_init:.6f}",
                    f"{mean_final:.6f}",
                    "",
                    f"{total_wall:.3f}",
                    "",
                    "",
                ]
            )


def cmd_run(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = _collect_images(args.images)
    if not images:
        log.error("no input images found")
        return 1
    ratios = [float(r) for r in args.ratios.split(",") if r]
    overrides = _overrides_from(args)
    jobs = [(path, ratio) for path in images for ratio in ratios]

    def work(job: tuple[Path, float]) -> RunResult | None:
        path, ratio = job
        try:
            return _single_run(
                path,
                ratio,
                args.seed,
                args.block_size,
                args.preset,
                overrides,
                args.denoiser,
                out_dir,
                args.history,
            )
        except (ImageIOError, ValueError, OSError) as exc:
            log.warning("skipping %s at ratio %g: %s", path, ratio, exc)
            return None

    workers = max(1, int(os.environ.get("HPNP_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(job) for job in jobs]

    completed = [r for r in results if r is not None]
    _write_summary(out_dir, completed)
    for res in completed:
        log.info(
            "%s ratio %g: %.2f dB -> %.2f dB in %d iterations (%.1fs)",
            res.image,
            res.ratio,
            res.psnr_init,
            res.psnr_final,
            res.iterations,
            res.wall_seconds,
        )
    if not completed:
        log.error("no runs completed")
        return 1
    return 0 if len(completed) == len(jobs) else 1


def cmd_encode(args: argparse.Namespace) -> int:
    original = load_image(args.image)
    cropped, top, left = center_crop(original, args.block_size)
    sensor = make_sensor(args.block_size, args.ratio, args.seed)
    meas = measure(sensor, cropped)
    save_measurements(meas, args.out)
    log.info(
        "encoded %s (crop %d,%d) to %s: %d x %d blocks, %d rows each",
        args.image,
        top,
        left,
        args.out,
        meas.blocks_y,
        meas.blocks_x,
        meas.m_rows,
    )
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    meas = load_measurements(args.meas)
    if args.seed is not None and args.seed != meas.seed:
        log.error(
            "seed flag %d does not match measurement file seed %d", args.seed, meas.seed
        )
        return 1
    sensor = sensor_for_measurements(meas)
    preset_name = args.preset or default_preset_name(sensor.ratio)
    cfg = build_config(load_preset(preset_name), _overrides_from(args), args.denoiser)
    history_path = args.history_out if args.history_out else None
    final, state = reconstruct(sensor, meas, cfg, history_path=history_path)
    save_image(final, args.out)
    log.info("decoded %s -> %s in %d iterations", args.meas, args.out, state.k)
    return 0


def cmd_psnr(args: argparse.Namespace) -> int:
    value = psnr(load_image(args.reference), load_image(args.test))
    print("inf" if math.isinf(value) else f"{value:.6f}")
    return 0


def _overrides_from(args: argparse.Namespace) -> dict:
    return {key: getattr(args, key, None) for key in _SCALAR_KEYS + _GEOMETRY_KEYS}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("solver overrides (beat preset values)")
    for key in _SCALAR_KEYS:
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float, default=None)
    for key in _GEOMETRY_KEYS:
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int, default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpnp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate, reconstruct and score images")
    run.add_argument("--images", nargs="+", required=True, help="image files or directories")
    run.add_argument("--ratios", required=True, help="comma-separated sampling ratios")
    run.add_argument("--preset", default=None, help="preset name (default: per-ratio)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--block-size", type=int, default=32)
    run.add_argument("--out", required=True)
    run.add_argument("--denoiser", type=parse_denoiser, default=DenoiserKind("native"))
    run.add_argument("--history", action="store_true", help="write per-run JSONL history")
    _add_config_flags(run)
    run.set_defaults(func=cmd_run)

    encode = sub.add_parser("encode", help="write a measurement file")
    encode.add_argument("--image", required=True)
    encode.add_argument("--ratio", type=float, required=True)
    encode.add_argument("--seed", type=int, default=0)
    encode.add_argument("--block-size", type=int, default=32)
    encode.add_argument("--out", required=True)
    encode.set_defaults(func=cmd_encode)

    decode = sub.add_parser("decode", help="reconstruct from a measurement file")
    decode.add_argument("--meas", required=True)
    decode.add_argument("--out", required=True)
    decode.add_argument("--preset", default=None)
    decode.add_argument("--seed", type=int, default=None, help="verify against file header")
    decode.add_argument("--denoiser", type=parse_denoiser, default=DenoiserKind("native"))
    decode.add_argument("--history-out", default=None)
    _add_config_flags(decode)
    decode.set_defaults(func=cmd_decode)

    quality = sub.add_parser("psnr", help="PSNR between two images")
    quality.add_argument("reference")
    quality.add_argument("test")
    quality.set_defaults(func=cmd_psnr)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ImageIOError, MeasurementFileError, FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
