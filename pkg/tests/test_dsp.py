import math

import numpy as np
import pytest

from auscult import dsp

import oracles


class TestHammingWindow:
    def test_n3_closed_form(self):
        np.testing.assert_allclose(dsp.hamming_window(3), [0.08, 1.0, 0.08], atol=1e-15)

    def test_n1_limit_case(self):
        np.testing.assert_array_equal(dsp.hamming_window(1), [1.0])

    def test_n64_symmetric_peak_at_center(self):
        w = dsp.hamming_window(64)
        np.testing.assert_allclose(w, w[::-1], atol=1e-15)
        # even length: the two center samples share the maximum, just below 1
        assert w.argmax() in (31, 32)
        assert w[31] == w[32] == w.max()
        assert abs(w.max() - 1.0) < 1e-3

    def test_n65_center_exactly_one(self):
        w = dsp.hamming_window(65)
        assert w[32] == 1.0
        assert w[0] == w[64]

    def test_matches_reference(self):
        for n in (2, 5, 200):
            np.testing.assert_allclose(dsp.hamming_window(n), oracles.hamming_ref(n), atol=1e-15)


class TestFft:
    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            dsp.fft(np.zeros(12))

    def test_impulse_is_flat(self):
        x = np.zeros(64)
        x[0] = 1.0
        np.testing.assert_allclose(np.abs(dsp.fft(x)), np.ones(64), atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 16, 128, 1024])
    def test_matches_naive_dft(self, n):
        rng = np.random.default_rng(n)
        for _ in range(5):
            x = rng.normal(size=n)
            got = dsp.fft(x)
            want = oracles.naive_dft(x)
            assert np.abs(got - want).max() <= 1e-8 * max(np.abs(want).max(), 1.0)

    def test_parseval_two_sided(self):
        rng = np.random.default_rng(3)
        for n in (16, 256):
            x = rng.normal(size=n)
            lhs = np.sum(np.abs(dsp.fft(x)) ** 2)
            rhs = n * np.sum(x**2)
            assert abs(lhs - rhs) <= 1e-6 * rhs


class TestMagnitudeSpectrum:
    def test_zero_window_is_zero(self):
        spec = dsp.magnitude_spectrum(np.zeros(100))
        assert spec.shape == (65,)  # fft 128 -> one-sided 65
        np.testing.assert_array_equal(spec, np.zeros(65))

    def test_random_windows_match_windowed_naive_dft(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.normal(size=128)
            got = dsp.magnitude_spectrum(x)
            want = np.abs(oracles.naive_dft(x * oracles.hamming_ref(128)))[:65]
            assert oracles.rel_err(got, want).max() <= 1e-8

    def test_scale_equivariance(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=200)
        for alpha in (0.0, 0.25, 3.0):
            np.testing.assert_allclose(
                dsp.magnitude_spectrum(alpha * x),
                alpha * dsp.magnitude_spectrum(x),
                atol=1e-12,
                rtol=1e-12,
            )

    def test_respects_explicit_fft_size(self):
        cfg = dsp.MfccConfig(fft_size=512)
        assert dsp.magnitude_spectrum(np.ones(100), cfg).shape == (257,)
        with pytest.raises(ValueError):
            dsp.magnitude_spectrum(np.ones(600), cfg)


class TestMelScale:
    def test_zero(self):
        assert dsp.mel_scale(0.0) == 0.0

    def test_700hz(self):
        assert math.isclose(float(dsp.mel_scale(700.0)), 2595.0 * math.log10(2.0), rel_tol=1e-12)

    def test_roundtrip(self):
        rng = np.random.default_rng(5)
        f = rng.uniform(0.0, 8000.0, size=100)
        np.testing.assert_allclose(dsp.mel_inverse(dsp.mel_scale(f)), f, atol=1e-9)


class TestFilterbank:
    CFG = dsp.MfccConfig()

    def test_breakpoints_mel_equispaced(self):
        fb = dsp.build_filterbank(self.CFG, 4000, fft_size=1024)
        gaps = np.diff(dsp.mel_scale(fb.breakpoints))
        np.testing.assert_allclose(gaps, gaps[0], atol=1e-9)

    def test_every_row_positive(self):
        fb = dsp.build_filterbank(self.CFG, 4000, fft_size=1024)
        assert fb.weights.shape == (26, 513)
        assert (fb.weights >= 0).all()
        assert (fb.weights.sum(axis=1) > 0).all()

    def test_centers_match_independent_recomputation(self):
        fb = dsp.build_filterbank(self.CFG, 4000, fft_size=1024)
        mlo, mhi = oracles.mel_ref(50.0), oracles.mel_ref(2000.0)
        half_bin = 0.5 * 4000 / 1024
        for j in range(28):
            want = oracles.mel_inv_ref(mlo + j * (mhi - mlo) / 27)
            assert abs(fb.breakpoints[j] - want) <= half_bin

    def test_degenerate_when_fft_too_small(self):
        with pytest.raises(dsp.DegenerateFilterError):
            dsp.build_filterbank(self.CFG, 4000, fft_size=64)

    def test_fmax_capped_at_nyquist(self):
        fb = dsp.build_filterbank(dsp.MfccConfig(fmax=5000.0), 4000, fft_size=1024)
        assert fb.breakpoints[-1] <= 2000.0 + 1e-9


class TestDct2:
    def test_constant_vector(self):
        c = 2.5
        y = dsp.dct2(np.full(26, c))
        assert math.isclose(y[0], c * math.sqrt(26), rel_tol=1e-12)
        np.testing.assert_allclose(y[1:], 0.0, atol=1e-12)

    def test_n2_direct_summation(self):
        np.testing.assert_allclose(dsp.dct2([1.0, -1.0], 2), oracles.dct2_ref([1.0, -1.0], 2), atol=1e-12)

    def test_matches_direct_summation_random(self):
        rng = np.random.default_rng(9)
        v = rng.normal(size=26)
        np.testing.assert_allclose(dsp.dct2(v, 13), oracles.dct2_ref(v, 13), atol=1e-12)

    def test_energy_preserved_when_complete(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=26)
        y = dsp.dct2(v, 26)
        assert abs(np.linalg.norm(y) - np.linalg.norm(v)) <= 1e-9

    def test_orthonormal_inverse_recovers_input(self):
        rng = np.random.default_rng(4)
        v = rng.normal(size=20)
        mat = dsp._dct2_matrix(20, 20)
        np.testing.assert_allclose(mat.T @ dsp.dct2(v, 20), v, atol=1e-9)


class TestMfcc:
    def test_output_length_13_under_defaults(self):
        rng = np.random.default_rng(1)
        assert dsp.mfcc(rng.normal(size=1000), 4000).shape == (13,)

    def test_all_zero_window(self):
        got = dsp.mfcc(np.zeros(1000), 4000)
        assert math.isclose(got[0], math.log(1e-10) * math.sqrt(26), rel_tol=1e-12)
        np.testing.assert_allclose(got[1:], 0.0, atol=1e-9)

    @pytest.mark.parametrize("length", [200, 1000])
    def test_matches_straightline_oracle(self, length):
        rng = np.random.default_rng(length)
        for _ in range(10):
            w = rng.normal(size=length)
            got = dsp.mfcc(w, 4000)
            want = oracles.straightline_mfcc(w, 4000)
            assert oracles.rel_err(got, want).max() <= 1e-6

    def test_pure_and_deterministic(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=777)
        a = dsp.mfcc(w, 4000)
        b = dsp.mfcc(w.copy(), 4000)
        assert np.array_equal(a, b)

    def test_config_invariants_enforced(self):
        with pytest.raises(ValueError):
            dsp.MfccConfig(n_coeffs=30, n_filters=26)
        with pytest.raises(ValueError):
            dsp.MfccConfig(fmin=3000.0, fmax=2000.0)
        with pytest.raises(ValueError):
            dsp.MfccConfig(fft_size=100)
