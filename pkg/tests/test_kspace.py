"""Centered FFT, Cartesian masks, phantoms: oracles and statistics."""

import numpy as np
import pytest

from kronmri import tensor as T
from kronmri.errors import ConfigError, ShapeError
from kronmri.kspace import (CENTER_FRACTION_DEFAULTS, apply_mask,
                            complex_magnitude, fft2c, gen_cartesian_mask,
                            gen_phantom, ifft2c, zero_filled)
from kronmri.rng import Rng
from kronmri.tensor import Tape, Tensor, backward


def naive_centered_dft(img: np.ndarray) -> np.ndarray:
    """O(N^4) double-sum oracle for the centered orthonormal 2-D DFT.

    Even dimensions only: both spatial and frequency indices are measured
    from the grid center, which reproduces the shift convention exactly.
    """
    z = img[0] + 1j * img[1]
    h, w = z.shape
    assert h % 2 == 0 and w % 2 == 0
    out = np.zeros((h, w), dtype=complex)
    ys = np.arange(h) - h // 2
    xs = np.arange(w) - w // 2
    for ky in range(h):
        for kx in range(w):
            phase = np.exp(-2j * np.pi * ((ky - h // 2) * ys[:, None] / h
                                          + (kx - w // 2) * xs[None, :] / w))
            out[ky, kx] = (z * phase).sum()
    out /= np.sqrt(h * w)
    return np.stack([out.real, out.imag])


def rand_image(rng, shape=(2, 8, 8), dtype=np.float64):
    return Tensor(rng.uniform(shape, -1, 1, dtype=dtype))


class TestFft2c:
    def test_center_delta_has_flat_magnitude(self):
        img = np.zeros((2, 4, 4))
        img[0, 2, 2] = 1.0
        k = fft2c(Tensor(img)).data
        mags = np.hypot(k[0], k[1])
        assert np.allclose(mags, 1.0 / 4.0, atol=1e-12)  # 1/sqrt(16)

    def test_constant_image_concentrates_at_dc(self):
        img = np.zeros((2, 8, 8))
        img[0] = 0.3
        k = fft2c(Tensor(img)).data
        mags = np.hypot(k[0], k[1])
        assert mags[4, 4] == pytest.approx(0.3 * 8.0, abs=1e-12)  # c*sqrt(HW)
        off = mags.copy()
        off[4, 4] = 0.0
        assert np.max(off) < 1e-12

    def test_matches_naive_dft_oracle(self):
        img = rand_image(Rng(400))
        k = fft2c(img).data
        oracle = naive_centered_dft(img.data)
        assert np.max(np.abs(k - oracle)) < 1e-10

    @pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-10)])
    def test_round_trip(self, dtype, tol):
        img = rand_image(Rng(401), dtype=dtype)
        back = ifft2c(fft2c(img)).data
        assert back.dtype == dtype
        assert np.max(np.abs(back - img.data)) < tol

    def test_parseval(self):
        img = rand_image(Rng(402), shape=(2, 16, 16))
        k = fft2c(img).data
        a = np.linalg.norm(img.data)
        b = np.linalg.norm(k)
        assert abs(a - b) / a < 1e-5

    def test_batched_matches_single(self):
        rng = Rng(403)
        batch = rng.uniform((3, 2, 8, 8), -1, 1)
        k = fft2c(Tensor(batch)).data
        for i in range(3):
            assert np.allclose(k[i], fft2c(Tensor(batch[i])).data, atol=1e-12)

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            fft2c(Tensor(np.zeros((3, 4, 4))))
        with pytest.raises(ShapeError):
            ifft2c(Tensor(np.zeros((8, 8))))

    def test_gradient_is_adjoint(self):
        # d/dx sum(w * fft2c(x)) must match central differences.
        rng = Rng(404)
        x = Tensor(rng.uniform((2, 4, 4), -1, 1), requires_grad=True)
        w = rng.uniform((2, 4, 4), -1, 1)
        with Tape():
            loss = T.sum_(T.mul(fft2c(x), Tensor(w)))
        g = backward(loss)[x].data
        h = 1e-6
        num = np.zeros_like(x.data)
        flat, nflat = x.data.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float((fft2c(Tensor(x.data)).data * w).sum())
            flat[i] = orig - h
            dn = float((fft2c(Tensor(x.data)).data * w).sum())
            flat[i] = orig
            nflat[i] = (up - dn) / (2 * h)
        assert np.max(np.abs(g - num)) < 1e-6

    def test_ifft_gradient_round_trip(self):
        rng = Rng(405)
        x = Tensor(rng.uniform((2, 4, 4), -1, 1), requires_grad=True)
        with Tape():
            loss = T.sum_(T.mul(ifft2c(fft2c(x)), ifft2c(fft2c(x))))
        g = backward(loss)[x].data
        assert np.allclose(g, 2 * x.data, atol=1e-10)


class TestCartesianMask:
    def test_center_columns_always_on(self):
        for seed in range(20):
            m = gen_cartesian_mask(64, 8, rng=Rng(seed))
            center = m.center_columns
            start = (64 - center) // 2
            assert np.all(m.sampled[start:start + center] == 1.0)

    def test_expected_fraction_over_thousand_draws(self):
        fractions = [gen_cartesian_mask(320, 8, rng=Rng(10_000 + s)).sampled_fraction
                     for s in range(1000)]
        mean = float(np.mean(fractions))
        assert abs(mean - 1 / 8) / (1 / 8) < 0.125

    def test_af16_expected_fraction(self):
        fractions = [gen_cartesian_mask(320, 16, rng=Rng(20_000 + s)).sampled_fraction
                     for s in range(300)]
        mean = float(np.mean(fractions))
        assert abs(mean - 1 / 16) / (1 / 16) < 0.125

    def test_reference_width_center_count(self):
        m = gen_cartesian_mask(320, 8, rng=Rng(1))
        assert m.center_columns == 13  # ceil(0.04 * 320)

    def test_zero_outside_probability_boundary(self):
        # af == 1/center_fraction: only the center survives.
        m = gen_cartesian_mask(320, 8, center_fraction=0.125, rng=Rng(2))
        assert m.sampled.sum() == m.center_columns == 40

    def test_determinism(self):
        a = gen_cartesian_mask(128, 16, rng=Rng(77))
        b = gen_cartesian_mask(128, 16, rng=Rng(77))
        assert np.array_equal(a.sampled, b.sampled)

    def test_mask_is_binary(self):
        m = gen_cartesian_mask(96, 8, rng=Rng(5))
        assert set(np.unique(m.sampled)).issubset({0.0, 1.0})

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            gen_cartesian_mask(64, 5, rng=Rng(0))          # unsupported af
        with pytest.raises(ConfigError):
            gen_cartesian_mask(8, 8, rng=Rng(0))           # width too small
        with pytest.raises(ConfigError):
            gen_cartesian_mask(64, 8, center_fraction=0.5, rng=Rng(0))  # p < 0

    def test_defaults_table(self):
        assert CENTER_FRACTION_DEFAULTS == {8: 0.04, 16: 0.02}


class TestApplyMask:
    def test_all_ones_identity(self):
        rng = Rng(500)
        k = rand_image(rng)
        m = gen_cartesian_mask(320, 8, rng=Rng(1))
        m.sampled = np.ones(8)
        m.width = 8
        out = apply_mask(k, m)
        assert out.data.tobytes() == k.data.tobytes()

    def test_column_loop_oracle(self):
        rng = Rng(501)
        k = rand_image(rng, shape=(2, 6, 16))
        m = gen_cartesian_mask(16, 8, center_fraction=0.1, rng=Rng(3))
        out = apply_mask(k, m).data
        for col in range(16):
            if m.sampled[col]:
                assert np.array_equal(out[:, :, col], k.data[:, :, col])
            else:
                assert np.all(out[:, :, col] == 0.0)

    def test_idempotent_exactly(self):
        k = rand_image(Rng(502), shape=(2, 8, 16))
        m = gen_cartesian_mask(16, 8, center_fraction=0.1, rng=Rng(4))
        once = apply_mask(k, m)
        twice = apply_mask(once, m)
        assert once.data.tobytes() == twice.data.tobytes()

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            apply_mask(rand_image(Rng(1)), gen_cartesian_mask(16, 8,
                                                              center_fraction=0.1,
                                                              rng=Rng(0)))

    def test_gradient_masks_backward_too(self):
        k = Tensor(Rng(503).uniform((2, 4, 16), -1, 1), requires_grad=True)
        m = gen_cartesian_mask(16, 8, center_fraction=0.1, rng=Rng(5))
        with Tape():
            loss = T.sum_(apply_mask(k, m))
        g = backward(loss)[k].data
        assert np.array_equal(g[0, 0], m.sampled)


class TestZeroFilled:
    def test_full_mask_reproduces_image(self):
        img = gen_phantom(32, 32, 4, Rng(600), dtype=np.float32)
        k = fft2c(img)
        m = gen_cartesian_mask(32, 8, rng=Rng(6))
        m.sampled = np.ones(32)
        recon = zero_filled(apply_mask(k, m)).data
        assert np.max(np.abs(recon - img.data)) < 1e-4

    def test_linearity(self):
        rng = Rng(601)
        k1, k2 = rand_image(rng), rand_image(rng)
        lhs = zero_filled(T.add(k1, k2)).data
        rhs = zero_filled(k1).data + zero_filled(k2).data
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_center_only_mask_blurs(self):
        img = gen_phantom(64, 64, 5, Rng(602))
        k = fft2c(img)
        m = gen_cartesian_mask(64, 8, center_fraction=0.125, rng=Rng(7))
        assert m.sampled.sum() == m.center_columns
        recon = zero_filled(apply_mask(k, m))
        err_low = np.linalg.norm(complex_magnitude(recon) - complex_magnitude(img))
        assert err_low > 1e-3  # genuinely lossy on a structured phantom


class TestPhantom:
    def test_zero_ellipses_zero_image(self):
        img = gen_phantom(16, 16, 0, Rng(700))
        assert np.all(img.data == 0.0)

    def test_determinism(self):
        a = gen_phantom(32, 24, 6, Rng(701))
        b = gen_phantom(32, 24, 6, Rng(701))
        assert a.data.tobytes() == b.data.tobytes()

    def test_bounds_over_thousand_seeds(self):
        worst_mag, worst_phase = 0.0, 0.0
        for seed in range(1000):
            img = gen_phantom(24, 24, 3, Rng(40_000 + seed))
            mag = complex_magnitude(img)
            worst_mag = max(worst_mag, float(mag.max()))
            assert mag.min() >= 0.0
            lit = mag > 1e-12
            if np.any(lit):
                phase = np.arctan2(img.data[1], img.data[0])[lit]
                worst_phase = max(worst_phase, float(np.abs(phase).max()))
        assert worst_mag <= 1.0 + 1e-12
        assert worst_phase <= np.pi / 4 + 1e-9

    def test_shape_and_dtype(self):
        img = gen_phantom(16, 20, 2, Rng(702), dtype=np.float32)
        assert img.shape == (2, 16, 20)
        assert img.dtype == np.float32

    def test_size_validation(self):
        with pytest.raises(ConfigError):
            gen_phantom(8, 32, 2, Rng(0))

    def test_magnitude_helper_matches_hypot(self):
        img = gen_phantom(16, 16, 3, Rng(703))
        mag = complex_magnitude(img)
        assert np.allclose(mag, np.sqrt(img.data[0] ** 2 + img.data[1] ** 2),
                           atol=1e-12)
