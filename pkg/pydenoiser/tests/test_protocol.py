import io
import struct
import subprocess
import sys

import numpy as np
import pytest

from pydenoiser.models import EchoModel, NlMeansModel, SlidingDctModel, TvModel, build_model
from pydenoiser.protocol import (
    ProtocolError,
    read_request,
    write_response,
)
from pydenoiser.cli import serve

REQ = struct.Struct("<8sIIf")
RESP = struct.Struct("<8sII")


def frame_request(width, height, sigma, pixels):
    return REQ.pack(b"HPNPDNZ1", width, height, sigma) + pixels.astype("<f4").tobytes()


def run_adapter(stdin_bytes, *args):
    return subprocess.run(
        [sys.executable, "-m", "pydenoiser", *args],
        input=stdin_bytes,
        capture_output=True,
        timeout=120,
    )


class TestFraming:
    def test_read_request_roundtrip(self):
        pixels = np.arange(12, dtype=np.float32).reshape(3, 4)
        req = read_request(io.BytesIO(frame_request(4, 3, 2.5, pixels)))
        assert req.sigma == 2.5
        assert req.width == 4 and req.height == 3
        assert np.array_equal(req.pixels, pixels)

    def test_read_request_eof(self):
        assert read_request(io.BytesIO(b"")) is None

    def test_bad_magic(self):
        data = b"XXXXXXXX" + REQ.pack(b"HPNPDNZ1", 1, 1, 0.0)[8:] + b"\0" * 4
        with pytest.raises(ProtocolError, match="magic"):
            read_request(io.BytesIO(data))

    def test_truncated_header(self):
        with pytest.raises(ProtocolError, match="header"):
            read_request(io.BytesIO(b"HPNPDNZ1\x01"))

    def test_truncated_payload(self):
        pixels = np.zeros((2, 2), dtype=np.float32)
        data = frame_request(2, 2, 1.0, pixels)[:-3]
        with pytest.raises(ProtocolError, match="payload"):
            read_request(io.BytesIO(data))

    def test_write_response_layout(self):
        out = io.BytesIO()
        write_response(out, np.ones((2, 3), dtype=np.float32))
        raw = out.getvalue()
        magic, width, height = RESP.unpack(raw[: RESP.size])
        assert magic == b"HPNPDNR1"
        assert (width, height) == (3, 2)
        assert len(raw) == RESP.size + 6 * 4


class TestServeLoop:
    def test_echo_two_frames_strict_alternation(self):
        a = np.random.default_rng(0).uniform(0, 255, (4, 5)).astype(np.float32)
        b = np.random.default_rng(1).uniform(0, 255, (2, 2)).astype(np.float32)
        stdin = io.BytesIO(frame_request(5, 4, 3.0, a) + frame_request(2, 2, 1.0, b))
        stdout = io.BytesIO()
        assert serve(EchoModel(), stdin, stdout) == 0
        raw = stdout.getvalue()
        first_len = RESP.size + a.size * 4
        magic, w, h = RESP.unpack(raw[: RESP.size])
        assert (magic, w, h) == (b"HPNPDNR1", 5, 4)
        assert np.array_equal(
            np.frombuffer(raw[RESP.size : first_len], dtype="<f4").reshape(4, 5), a
        )
        magic, w, h = RESP.unpack(raw[first_len : first_len + RESP.size])
        assert (magic, w, h) == (b"HPNPDNR1", 2, 2)
        assert len(raw) == first_len + RESP.size + b.size * 4

    def test_malformed_frame_writes_nothing_nonzero_exit(self):
        stdin = io.BytesIO(b"GARBAGEGARBAGEGARBAGE")
        stdout = io.BytesIO()
        code = serve(EchoModel(), stdin, stdout)
        assert code != 0
        assert stdout.getvalue() == b""


class TestSubprocess:
    def test_echo_mode_bit_exact(self):
        pixels = np.floor(np.random.default_rng(2).uniform(0, 256, (16, 24))).astype(
            np.float32
        )
        proc = run_adapter(frame_request(24, 16, 10.0, pixels), "--echo")
        assert proc.returncode == 0
        raw = proc.stdout
        magic, w, h = RESP.unpack(raw[: RESP.size])
        assert (magic, w, h) == (b"HPNPDNR1", 24, 16)
        out = np.frombuffer(raw[RESP.size :], dtype="<f4").reshape(16, 24)
        assert np.array_equal(out, pixels)

    def test_truncated_frame_nonzero_exit_no_response(self):
        pixels = np.zeros((8, 8), dtype=np.float32)
        data = frame_request(8, 8, 1.0, pixels)[:-10]
        proc = run_adapter(data, "--echo")
        assert proc.returncode != 0
        assert proc.stdout == b""
        assert b"truncated" in proc.stderr

    def test_clean_exit_on_eof(self):
        proc = run_adapter(b"", "--echo")
        assert proc.returncode == 0
        assert proc.stdout == b""

    def test_unknown_model_rejected(self):
        proc = run_adapter(b"", "--model", "nonsense")
        assert proc.returncode == 1
        assert b"unknown model" in proc.stderr


class TestModels:
    @pytest.mark.parametrize("name", ["nlm", "tv", "dct16"])
    def test_sigma_zero_near_identity(self, name):
        model = build_model(False, name, None, "cpu")
        pixels = np.floor(
            np.random.default_rng(3).uniform(0, 256, (48, 48))
        ).astype(np.float32)
        out = model.denoise(pixels, 0.0)
        rmse = float(np.sqrt(np.mean((out.astype(float) - pixels.astype(float)) ** 2)))
        assert out.shape == pixels.shape
        assert rmse < 1.0, f"{name} rmse {rmse}"

    @pytest.mark.parametrize("name", ["nlm", "tv", "dct16"])
    def test_reduces_gaussian_noise(self, name):
        rng = np.random.default_rng(4)
        clean = np.tile(np.linspace(40, 220, 48), (48, 1))
        noisy = np.clip(clean + rng.normal(0, 15, clean.shape), 0, 255).astype(np.float32)
        model = build_model(False, name, None, "cpu")
        out = model.denoise(noisy, 15.0).astype(np.float64)
        assert np.mean((out - clean) ** 2) < np.mean((noisy.astype(np.float64) - clean) ** 2)

    def test_outputs_stay_in_range(self):
        model = SlidingDctModel()
        rng = np.random.default_rng(5)
        pixels = rng.uniform(0, 255, (32, 32)).astype(np.float32)
        out = model.denoise(pixels, 25.0)
        assert out.min() >= 0.0 and out.max() <= 255.0

    def test_model_names(self):
        assert NlMeansModel().name == "nlm"
        assert TvModel().name == "tv"
        assert SlidingDctModel().name == "dct16"
