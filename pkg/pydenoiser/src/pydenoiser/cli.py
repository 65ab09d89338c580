"""Serve a grayscale Gaussian denoiser over the framed stdin/stdout protocol.

Reads one framed request at a time, denoises at the requested sigma, writes
one framed response, and exits cleanly on stdin EOF. A malformed frame writes
nothing and exits nonzero with a diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import sys

from .models import build_model
from .protocol import ProtocolError, read_request, write_response


def serve(model, stdin=None, stdout=None) -> int:
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    while True:
        try:
            request = read_request(stdin)
        except ProtocolError as exc:
            print(f"pydenoiser: {exc}", file=sys.stderr)
            return 2
        if request is None:
            return 0
        result = model.denoise(request.pixels, request.sigma)
        if result.shape != request.pixels.shape:
            print(
                f"pydenoiser: model {model.name} changed shape "
                f"{request.pixels.shape} -> {result.shape}",
                file=sys.stderr,
            )
            return 3
        write_response(stdout, result)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pydenoiser", description=__doc__)
    parser.add_argument("--echo", action="store_true", help="identity mode, no model needed")
    parser.add_argument("--model", default="nlm", help="classical backend: nlm or tv")
    parser.add_argument("--weights", default=None, help="TorchScript module path")
    parser.add_argument("--device", default="cpu", help="device for torch backends")
    parser.add_argument(
        "--strength", type=float, default=None,
        help="filtering strength as a multiple of the requested sigma (backend default if omitted)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        model = build_model(args.echo, args.model, args.weights, args.device, args.strength)
    except (ValueError, OSError) as exc:
        print(f"pydenoiser: {exc}", file=sys.stderr)
        return 1
    print(f"pydenoiser: serving model {model.name}", file=sys.stderr)
    return serve(model)


if __name__ == "__main__":
    sys.exit(main())
