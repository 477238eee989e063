"""EMG envelope extraction and Savitzky-Golay smoothing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import Recording
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class PreprocessConfig:
    ramp_s: float = 0.5
    bandpass_low_hz: float = 15.0
    bandpass_high_hz: float = 490.0
    lowpass_hz: float = 4.0
    filter_order: int = 4

    def validate(self, rate_hz: float) -> None:
        nyq = rate_hz / 2.0
        if not 0 < self.bandpass_low_hz < self.bandpass_high_hz < nyq:
            raise InvalidArgumentError(
                f"band-pass {self.bandpass_low_hz}-{self.bandpass_high_hz} Hz does not fit "
                f"below Nyquist ({nyq} Hz)")
        if not 0 < self.lowpass_hz < nyq:
            raise InvalidArgumentError(f"low-pass {self.lowpass_hz} Hz outside (0, {nyq})")
        if self.ramp_s < 0:
            raise InvalidArgumentError("ramp_s must be non-negative")
        if self.filter_order < 1:
            raise InvalidArgumentError("filter_order must be >= 1")


@dataclass(frozen=True)
class SgConfig:
    order: int = 1
    window: int = 301

    def __post_init__(self):
        if self.window % 2 != 1:
            raise InvalidArgumentError(f"window must be odd, got {self.window}")
        if not self.window > self.order >= 0:
            raise InvalidArgumentError("need window > order >= 0")


def hann_ramp(n_ramp: int) -> np.ndarray:
    """Rising half-Hann taper of ``n_ramp`` samples, starting at exactly 0."""
    i = np.arange(n_ramp)
    return np.sin(np.pi * i / (2.0 * n_ramp)) ** 2


def apply_ramp_window(rec: Recording, ramp_s: float) -> Recording:
    """Taper the first and last ``ramp_s`` seconds with half-Hann ramps."""
    n = rec.n_samples
    n_ramp = int(round(ramp_s * rec.rate_hz))
    if ramp_s < 0 or n_ramp > n / 2:
        raise InvalidArgumentError(
            f"ramp of {n_ramp} samples does not fit twice into {n} samples")
    if n_ramp == 0:
        return rec
    w = np.ones(n)
    ramp = hann_ramp(n_ramp)
    w[:n_ramp] = ramp
    w[n - n_ramp:] = np.minimum(w[n - n_ramp:], ramp[::-1])
    return rec.with_samples(rec.samples * w)


def bandpass_sos(cfg: PreprocessConfig, rate_hz: float) -> np.ndarray:
    return signal.butter(cfg.filter_order, [cfg.bandpass_low_hz, cfg.bandpass_high_hz],
                         btype="bandpass", fs=rate_hz, output="sos")


def lowpass_sos(cfg: PreprocessConfig, rate_hz: float) -> np.ndarray:
    return signal.butter(cfg.filter_order, cfg.lowpass_hz, btype="lowpass",
                         fs=rate_hz, output="sos")


def zscore_rows(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-SD rows; zero-variance rows are only centred."""
    x = x - x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    return np.divide(x, sd, out=np.zeros_like(x), where=sd > 0)


def bandpass_emg(rec: Recording, cfg: PreprocessConfig = PreprocessConfig()) -> Recording:
    """Ramp taper, linear detrend, z-score and zero-phase band-pass."""
    cfg.validate(rec.rate_hz)
    x = apply_ramp_window(rec, cfg.ramp_s).samples
    x = signal.detrend(x, axis=1, type="linear")
    x = zscore_rows(x)
    x = signal.sosfiltfilt(bandpass_sos(cfg, rec.rate_hz), x, axis=1)
    return rec.with_samples(x)


def envelope(x: np.ndarray, rate_hz: float, cfg: PreprocessConfig = PreprocessConfig()) -> np.ndarray:
    """Full-wave rectification and zero-phase low-pass, clipped at zero."""
    x = signal.sosfiltfilt(lowpass_sos(cfg, rate_hz), np.abs(x), axis=-1)
    return np.clip(x, 0.0, None)


def preprocess_emg(rec: Recording, cfg: PreprocessConfig = PreprocessConfig()) -> Recording:
    """Turn raw EMG into a non-negative activation envelope per channel.

    Ramp taper, then: linear detrend, z-score, zero-phase Butterworth band-pass,
    full-wave rectification, zero-phase Butterworth low-pass. Negative ringing
    left by the low-pass is clipped to zero.
    """
    bp = bandpass_emg(rec, cfg)
    return bp.with_samples(envelope(bp.samples, rec.rate_hz, cfg))


def _sg_center_coeffs(half: int, order: int) -> np.ndarray:
    # least-squares polynomial fit evaluated at the window centre
    t = np.arange(-half, half + 1, dtype=np.float64)
    vander = np.vander(t, order + 1, increasing=True)
    return np.linalg.pinv(vander)[0]


def savitzky_golay(series, cfg: SgConfig = SgConfig()) -> np.ndarray:
    """Centred least-squares polynomial smoothing.

    Near the ends the window shrinks symmetrically so the output keeps the
    input length without padding. A window too short to fit the polynomial
    degenerates to the raw sample.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[0]
    if n < cfg.window:
        raise InvalidArgumentError(f"series of {n} samples is shorter than window {cfg.window}")
    half = cfg.window // 2
    idx = np.arange(n)
    halves = np.minimum(np.minimum(idx, n - 1 - idx), half)
    if cfg.order <= 1:
        # a centred line fit evaluates to the window mean
        csum = np.concatenate([[0.0], np.cumsum(x)])
        return (csum[idx + halves + 1] - csum[idx - halves]) / (2 * halves + 1)
    out = np.empty(n)
    interior = slice(half, n - half)
    out[interior] = np.convolve(x, _sg_center_coeffs(half, cfg.order)[::-1], mode="valid")
    for i in np.flatnonzero(halves < half):
        h = halves[i]
        seg = x[i - h:i + h + 1]
        out[i] = seg[h] if 2 * h + 1 <= cfg.order else _sg_center_coeffs(h, cfg.order) @ seg
    return out
