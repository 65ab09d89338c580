"""Grayscale Gaussian denoiser served over a framed stdin/stdout protocol."""

from .models import EchoModel, NlMeansModel, SlidingDctModel, TorchscriptModel, TvModel, build_model
from .protocol import ProtocolError, Request, read_request, write_response

__version__ = "0.1.0"

__all__ = [
    "EchoModel",
    "NlMeansModel",
    "SlidingDctModel",
    "ProtocolError",
    "Request",
    "TorchscriptModel",
    "TvModel",
    "build_model",
    "read_request",
    "write_response",
]
