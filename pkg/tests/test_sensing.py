import numpy as np
import pytest

from hpnp.image import Image, psnr
from hpnp.sensing import (
    MeasurementFileError,
    Measurements,
    BlockSensor,
    adjoint,
    initial_estimate,
    load_measurements,
    make_sensor,
    measure,
    save_measurements,
    sensor_for_measurements,
)


def random_image(shape, seed=0, integer=False):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0, 255, shape)
    if integer:
        data = np.floor(data)
    return Image(data)


class TestMakeSensor:
    def test_full_sampling_is_square_orthonormal(self):
        s = make_sensor(8, 1.0, 3)
        assert s.matrix.shape == (64, 64)
        assert np.abs(s.gram - np.eye(64)).max() < 1e-10

    def test_row_orthonormality(self):
        s = make_sensor(16, 0.4, 11)
        gramian = s.matrix @ s.matrix.T
        assert np.abs(gramian - np.eye(s.m_rows)).max() < 1e-10

    def test_gram_cache_matches(self):
        s = make_sensor(8, 0.3, 5)
        assert np.abs(s.gram - s.matrix.T @ s.matrix).max() < 1e-12

    def test_same_seed_bit_identical(self):
        a = make_sensor(16, 0.25, 123)
        b = make_sensor(16, 0.25, 123)
        assert np.array_equal(a.matrix, b.matrix)

    def test_different_seeds_differ(self):
        a = make_sensor(8, 0.5, 1)
        b = make_sensor(8, 0.5, 2)
        assert not np.array_equal(a.matrix, b.matrix)

    def test_row_count_rounding(self):
        assert make_sensor(32, 0.1, 0).m_rows == 102  # round(0.1 * 1024)

    @pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5])
    def test_ratio_out_of_range(self, ratio):
        with pytest.raises(ValueError):
            make_sensor(8, ratio, 0)


def manual_sensor():
    # hand-built 2x2-block sensor selecting the first two block entries
    matrix = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    return BlockSensor(2, 0.5, 0, matrix, matrix.T @ matrix)


class TestMeasure:
    def test_zero_image(self):
        s = make_sensor(4, 0.5, 0)
        m = measure(s, Image(np.zeros((8, 8))))
        assert np.all(m.data == 0.0)

    def test_linearity(self):
        s = make_sensor(4, 0.5, 0)
        x = random_image((8, 8), 1)
        scaled = measure(s, Image(2.5 * x.data))
        assert np.allclose(scaled.data, 2.5 * measure(s, x).data, atol=1e-12)

    def test_manual_block_product(self):
        s = manual_sensor()
        m = measure(s, Image(np.array([[1.0, 2.0], [3.0, 4.0]])))
        assert m.data.shape == (1, 1, 2)
        assert m.data[0, 0].tolist() == [1.0, 2.0]

    def test_indivisible_dimensions_rejected(self):
        s = make_sensor(4, 0.5, 0)
        with pytest.raises(ValueError, match="divisible"):
            measure(s, Image(np.zeros((9, 8))))


class TestAdjoint:
    def test_full_sampling_inverts(self):
        s = make_sensor(8, 1.0, 2)
        x = random_image((16, 16), 3)
        assert np.abs(adjoint(s, measure(s, x)).data - x.data).max() < 1e-8

    def test_zero_measurements(self):
        s = make_sensor(4, 0.5, 0)
        m = measure(s, Image(np.zeros((8, 8))))
        assert np.all(adjoint(s, m).data == 0.0)

    def test_adjoint_identity(self):
        s = make_sensor(8, 0.4, 9)
        rng = np.random.default_rng(10)
        x = Image(rng.standard_normal((16, 16)))
        y = Measurements(8, s.seed, rng.standard_normal((2, 2, s.m_rows)))
        lhs = float(np.sum(measure(s, x).data * y.data))
        rhs = float(np.sum(x.data * adjoint(s, y).data))
        assert lhs == pytest.approx(rhs, rel=1e-8)

    def test_geometry_mismatch(self):
        a = make_sensor(4, 0.5, 0)
        b = make_sensor(4, 0.25, 0)
        m = measure(a, Image(np.zeros((8, 8))))
        with pytest.raises(ValueError, match="geometry"):
            adjoint(b, m)


class TestInitialEstimate:
    def test_full_sampling_exact_without_smoothing(self):
        s = make_sensor(8, 1.0, 4)
        x = random_image((16, 16), 5)
        x0 = initial_estimate(s, measure(s, x), smoothing_iters=0)
        assert np.abs(x0.data - x.data).max() < 1e-8

    def test_zero_iters_equals_adjoint(self):
        s = make_sensor(8, 0.3, 4)
        m = measure(s, random_image((16, 16), 6))
        assert np.array_equal(
            initial_estimate(s, m, smoothing_iters=0).data, adjoint(s, m).data
        )

    def test_landweber_improves_over_adjoint(self, crops):
        img = crops["camera_face"]
        s = make_sensor(32, 0.3, 7)
        m = measure(s, img)
        plain = psnr(img, adjoint(s, m).clamped())
        refined = psnr(img, initial_estimate(s, m, smoothing_iters=8))
        assert refined > plain


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        s = make_sensor(8, 0.4, 77)
        m = measure(s, random_image((16, 24), 8))
        path = tmp_path / "x.meas"
        save_measurements(m, path)
        loaded = load_measurements(path)
        assert loaded.block_size == 8
        assert loaded.seed == 77
        assert np.array_equal(loaded.data, m.data)

    def test_sensor_rebuilt_from_header(self, tmp_path):
        s = make_sensor(8, 0.4, 77)
        m = measure(s, random_image((16, 16), 9))
        path = tmp_path / "x.meas"
        save_measurements(m, path)
        rebuilt = sensor_for_measurements(load_measurements(path))
        assert np.array_equal(rebuilt.matrix, s.matrix)

    def test_bad_magic(self, tmp_path):
        s = make_sensor(4, 0.5, 0)
        m = measure(s, random_image((8, 8), 10))
        path = tmp_path / "x.meas"
        save_measurements(m, path)
        raw = bytearray(path.read_bytes())
        raw[:8] = b"NOTMAGIC"
        path.write_bytes(bytes(raw))
        with pytest.raises(MeasurementFileError, match="magic"):
            load_measurements(path)

    def test_truncated_payload(self, tmp_path):
        s = make_sensor(4, 0.5, 0)
        m = measure(s, random_image((8, 8), 11))
        path = tmp_path / "x.meas"
        save_measurements(m, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(MeasurementFileError, match="payload"):
            load_measurements(path)
