import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from facesynergy.core import Recording
from facesynergy.dsp import (
    PreprocessConfig, SgConfig, apply_ramp_window, bandpass_sos, hann_ramp, lowpass_sos,
    preprocess_emg, savitzky_golay,
)
from facesynergy.errors import InvalidArgumentError

FS = 1000.0


def sos_gain_db(sos, f_hz, fs):
    """Magnitude of a cascade of biquads evaluated directly on the unit circle."""
    z = np.exp(1j * 2 * np.pi * f_hz / fs)
    h = 1.0 + 0j
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
    return 20 * np.log10(abs(h))


def tone(f, seconds=4.0, fs=FS):
    return np.sin(2 * np.pi * f * np.arange(int(seconds * fs)) / fs)


class TestRamp:
    def test_first_sample_zero(self):
        out = apply_ramp_window(Recording(np.ones((2, 2000)), FS), 0.5)
        assert np.all(out.samples[:, 0] == 0.0)

    def test_middle_untouched(self):
        out = apply_ramp_window(Recording(np.ones((1, 2000)), FS), 0.5)
        assert out.samples[0, 1000] == 1.0
        assert np.all(out.samples[0, 500:1500] == 1.0)

    def test_ramp_midpoint(self):
        out = apply_ramp_window(Recording(np.ones((1, 2000)), FS), 0.5)
        assert out.samples[0, 250] == pytest.approx(np.sin(np.pi / 4) ** 2, abs=1e-12)
        assert out.samples[0, 250] == pytest.approx(0.5, abs=1e-12)

    def test_falling_edge_mirrors_rising(self):
        out = apply_ramp_window(Recording(np.ones((1, 2000)), FS), 0.5).samples[0]
        assert np.allclose(out[:500], hann_ramp(500))
        assert np.allclose(out[1500:], hann_ramp(500)[::-1])

    def test_too_long(self):
        with pytest.raises(InvalidArgumentError):
            apply_ramp_window(Recording(np.ones((1, 800)), FS), 0.5)


class TestFilters:
    @pytest.mark.parametrize("edge", [15.0, 490.0])
    def test_bandpass_edges_single_pass(self, edge):
        sos = bandpass_sos(PreprocessConfig(), FS)
        assert sos_gain_db(sos, edge, FS) == pytest.approx(-3.01, abs=0.5)

    @pytest.mark.parametrize("edge", [15.0, 490.0])
    def test_bandpass_edges_forward_backward(self, edge):
        # the zero-phase response is the squared single-pass magnitude
        sos = bandpass_sos(PreprocessConfig(), FS)
        assert 2 * sos_gain_db(sos, edge, FS) == pytest.approx(-6.02, abs=0.5)

    def test_bandpass_edges_measured(self):
        sos = bandpass_sos(PreprocessConfig(), FS)
        x = tone(15.0, seconds=20.0)
        y = signal.sosfiltfilt(sos, x)
        mid = slice(5000, 15000)
        gain = 20 * np.log10(np.sqrt(np.mean(y[mid] ** 2) / np.mean(x[mid] ** 2)))
        assert gain == pytest.approx(-6.02, abs=0.5)

    def test_lowpass_cutoff(self):
        assert sos_gain_db(lowpass_sos(PreprocessConfig(), FS), 4.0, FS) == pytest.approx(-3.01, abs=0.5)

    def test_rate_too_low(self):
        with pytest.raises(InvalidArgumentError):
            preprocess_emg(Recording(np.ones((1, 5000)), 500.0))


class TestPreprocess:
    def test_zero_in_zero_out(self):
        out = preprocess_emg(Recording(np.zeros((4, 3000)), FS))
        assert np.all(out.samples == 0.0)

    def test_out_of_band_sinusoid_suppressed(self):
        low = preprocess_emg(Recording(tone(5.0)[None, :], FS)).samples[0]
        ref = preprocess_emg(Recording(tone(100.0)[None, :], FS)).samples[0]
        mid = slice(1000, 3000)
        assert 20 * np.log10(low[mid].max() / ref[mid].mean()) < -20.0

    def test_am_burst_gives_one_bump(self):
        x = tone(100.0, seconds=5.0)
        x[:2000] *= 0.0
        x[3000:] *= 0.0
        env = preprocess_emg(Recording(x[None, :], FS)).samples[0]
        peak = int(np.argmax(env))
        assert 2000 - 50 <= peak <= 3000 + 50
        above = np.flatnonzero(env > 0.5 * env.max())
        # a single contiguous bump spanning the burst
        assert np.all(np.diff(above) == 1)
        assert abs(above[0] - 2000) < 150 and abs(above[-1] - 3000) < 150

    def test_symmetric_pulse_stays_symmetric(self):
        n = 6001
        t = np.arange(n)
        burst = np.exp(-0.5 * ((t - 3000) / 300.0) ** 2) * np.sin(2 * np.pi * 100 * (t - 3000) / FS)
        env = preprocess_emg(Recording(burst[None, :], FS)).samples[0]
        asym = np.max(np.abs(env - env[::-1])) / env.max()
        assert asym < 0.01
        assert int(np.argmax(env)) == pytest.approx(3000, abs=5)

    @given(st.integers(0, 2**32 - 1))
    def test_output_non_negative(self, seed):
        x = np.random.default_rng(seed).standard_normal((2, 2500)) * 5
        out = preprocess_emg(Recording(x, FS))
        assert out.samples.min() >= 0.0
        assert out.samples.shape == x.shape and out.rate_hz == FS


class TestSavitzkyGolay:
    def test_constant_unchanged(self):
        assert np.allclose(savitzky_golay(np.full(500, 3.2)), 3.2)

    def test_ramp_unchanged(self):
        x = 0.01 * np.arange(900) - 2.0
        assert np.allclose(savitzky_golay(x), x, atol=1e-9)

    def test_step_matches_line_fit_oracle(self):
        x = np.zeros(1001)
        x[500:] = 1.0
        out = savitzky_golay(x)
        for i in (200, 420, 500, 560, 700):
            seg = np.arange(i - 150, i + 151)
            fit = np.polyval(np.polyfit(seg - i, x[seg], 1), 0.0)
            assert out[i] == pytest.approx(fit, abs=1e-12)
        # 151 of the 301 samples centred on the step are ones
        assert out[500] == pytest.approx(151 / 301, abs=1e-12)

    def test_step_midpoint_half(self):
        x = np.zeros(1001)
        x[500] = 0.5
        x[501:] = 1.0
        assert savitzky_golay(x)[500] == pytest.approx(0.5, abs=1e-12)

    def test_higher_order_matches_scipy_interior(self, rng):
        x = rng.standard_normal(800)
        cfg = SgConfig(order=3, window=31)
        ours = savitzky_golay(x, cfg)
        ref = signal.savgol_filter(x, 31, 3)
        assert np.allclose(ours[15:-15], ref[15:-15], atol=1e-10)

    def test_edges_shrink_symmetrically(self, rng):
        x = rng.standard_normal(400)
        out = savitzky_golay(x, SgConfig(order=1, window=301))
        assert out[0] == x[0]
        assert out[10] == pytest.approx(x[:21].mean(), abs=1e-12)
        assert out[-11] == pytest.approx(x[-21:].mean(), abs=1e-12)

    def test_too_short(self):
        with pytest.raises(InvalidArgumentError):
            savitzky_golay(np.zeros(300))

    def test_bad_config(self):
        with pytest.raises(InvalidArgumentError):
            SgConfig(order=1, window=300)
        with pytest.raises(InvalidArgumentError):
            SgConfig(order=5, window=5)

    @given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3), st.integers(1, 40))
    def test_linear_and_shift_equivariant(self, seed, a, b, shift):
        r = np.random.default_rng(seed)
        x, y = r.standard_normal(700), r.standard_normal(700)
        cfg = SgConfig(window=101)
        lhs = savitzky_golay(a * x + b * y, cfg)
        assert np.allclose(lhs, a * savitzky_golay(x, cfg) + b * savitzky_golay(y, cfg), atol=1e-9)
        shifted = savitzky_golay(np.roll(x, shift), cfg)
        interior = slice(50 + shift, 650)
        assert np.allclose(shifted[interior], np.roll(savitzky_golay(x, cfg), shift)[interior], atol=1e-9)
