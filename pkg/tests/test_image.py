import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpnp.image import (
    Image,
    NonGrayscaleError,
    TruncatedFileError,
    UnsupportedDepthError,
    UnsupportedFormatError,
    load_image,
    psnr,
    save_image,
)


def write_pgm(path, width, height, maxval, payload):
    path.write_bytes(f"P5\n{width} {height}\n{maxval}\n".encode() + payload)


class TestImageType:
    def test_rejects_non_2d(self):
        with pytest.raises(ValueError):
            Image(np.zeros(4))

    def test_rejects_nan(self):
        data = np.zeros((2, 2))
        data[0, 0] = np.nan
        with pytest.raises(ValueError):
            Image(data)

    def test_rejects_inf(self):
        with pytest.raises(ValueError):
            Image(np.full((2, 2), np.inf))

    def test_buffer_is_frozen(self):
        img = Image(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            img.data[0, 0] = 1.0


class TestLoad:
    def test_pgm_bytes_map_exactly(self, tmp_path):
        path = tmp_path / "t.pgm"
        write_pgm(path, 2, 2, 255, bytes([0, 128, 255, 64]))
        img = load_image(path)
        assert img.shape == (2, 2)
        assert img.data.tolist() == [[0.0, 128.0], [255.0, 64.0]]

    def test_png_matches_pgm(self, tmp_path):
        pixels = np.array([[0, 128], [255, 64]], dtype=float)
        png = tmp_path / "t.png"
        save_image(Image(pixels), png)
        assert load_image(png).data.tolist() == pixels.tolist()

    def test_pgm_with_comment(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n255\n" + bytes([7, 9]))
        assert load_image(path).data.tolist() == [[7.0, 9.0]]

    def test_16bit_pgm_rejected(self, tmp_path):
        path = tmp_path / "deep.pgm"
        write_pgm(path, 2, 2, 65535, bytes(8))
        with pytest.raises(UnsupportedDepthError, match="unsupported depth"):
            load_image(path)

    def test_truncated_pgm(self, tmp_path):
        path = tmp_path / "short.pgm"
        write_pgm(path, 4, 4, 255, bytes(7))
        with pytest.raises(TruncatedFileError):
            load_image(path)

    def test_color_png_rejected(self, tmp_path):
        from PIL import Image as PILImage

        path = tmp_path / "rgb.png"
        PILImage.new("RGB", (2, 2), (10, 20, 30)).save(path)
        with pytest.raises(NonGrayscaleError):
            load_image(path)

    def test_16bit_png_rejected(self, tmp_path):
        from PIL import Image as PILImage

        path = tmp_path / "deep.png"
        PILImage.new("I;16", (2, 2)).save(path)
        with pytest.raises(UnsupportedDepthError):
            load_image(path)

    def test_unknown_format(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"GIF89a whatever")
        with pytest.raises(UnsupportedFormatError):
            load_image(path)


class TestSave:
    def test_clamps_high_values(self, tmp_path):
        path = tmp_path / "c.pgm"
        save_image(Image(np.full((1, 1), 255.7)), path)
        assert load_image(path).data[0, 0] == 255.0

    def test_clamps_negative(self, tmp_path):
        path = tmp_path / "c.pgm"
        save_image(Image(np.full((1, 1), -3.2)), path)
        assert load_image(path).data[0, 0] == 0.0

    def test_rounds_half_up(self, tmp_path):
        path = tmp_path / "r.pgm"
        save_image(Image(np.array([[127.5, 126.5, 127.4]])), path)
        assert load_image(path).data.tolist() == [[128.0, 127.0, 127.0]]

    def test_unknown_extension(self, tmp_path):
        with pytest.raises(UnsupportedFormatError):
            save_image(Image(np.zeros((1, 1))), tmp_path / "x.bmp")

    @given(
        st.lists(st.integers(min_value=0, max_value=255), min_size=6, max_size=6),
        st.sampled_from(["pgm", "png"]),
    )
    def test_roundtrip_integer_images(self, values, ext):
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            path = f"{tmp}/img.{ext}"
            original = Image(np.array(values, dtype=float).reshape(2, 3))
            save_image(original, path)
            assert np.array_equal(load_image(path).data, original.data)


class TestPsnr:
    def test_identical_is_infinite(self):
        img = Image(np.arange(16, dtype=float).reshape(4, 4))
        assert psnr(img, img) == math.inf

    def test_full_range_difference_is_zero(self):
        a = Image(np.zeros((3, 3)))
        b = Image(np.full((3, 3), 255.0))
        assert psnr(a, b) == 0.0

    def test_single_pixel_difference(self):
        # 8x8 images, one pixel differs by 16: MSE = 256/64 = 4
        a = Image(np.zeros((8, 8)))
        data = np.zeros((8, 8))
        data[3, 5] = 16.0
        expected = 10.0 * math.log10(255.0**2 / 4.0)
        assert psnr(a, Image(data)) == pytest.approx(expected, abs=0.01)
        assert expected == pytest.approx(42.11, abs=0.01)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            psnr(Image(np.zeros((2, 2))), Image(np.zeros((2, 3))))

    @given(st.integers(0, 2**32 - 1))
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = Image(rng.uniform(0, 255, (5, 5)))
        b = Image(rng.uniform(0, 255, (5, 5)))
        assert psnr(a, b) == psnr(b, a)

    @given(st.floats(min_value=-50.0, max_value=50.0, allow_nan=False))
    def test_constant_offset_depends_on_magnitude(self, c):
        rng = np.random.default_rng(7)
        base = rng.uniform(60, 200, (6, 6))
        up = psnr(Image(base), Image(base + c))
        down = psnr(Image(base), Image(base - c))
        assert up == pytest.approx(down, rel=1e-12)
