"""Multimodal AU identification: match ICs to CV labels, threshold, delay."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from .bss import IcaResult, fastica
from .core import Block, Kind, LabelTrack, Modality, upsample_track
from .dsp import PreprocessConfig, SgConfig, bandpass_emg, envelope, preprocess_emg, savitzky_golay
from .errors import DegenerateInputError, InvalidArgumentError

AU_CLASSES = ("AU6", "AU12", "NOISE")


@dataclass(frozen=True, eq=False)
class AuAssignment:
    """Which IC carries AU12, AU6 and noise.

    ``correlations[i, j]`` is the peak |Pearson r| over lags between IC ``i``
    and reference ``j`` in (AU6 CV, AU12 CV, uniform noise) order; ``lags``
    holds the lag in samples at which each peak occurred.
    """

    component_of: dict
    correlations: np.ndarray
    lags: np.ndarray
    noise_seed: int


@dataclass(frozen=True)
class ThresholdConfig:
    """Baseline threshold ``mean + k * max(SD, sigma_floor)``.

    ``min_label_r`` gates detection as a whole: an AU whose assigned IC peaks
    below this |r| against the camera label is reported as absent.
    """

    k: float = 2.0
    baseline_s: float = 1.0
    sigma_floor: float = 1e-9
    min_label_r: float = 0.2

    def __post_init__(self):
        if not self.k > 0 or not self.baseline_s > 0:
            raise InvalidArgumentError("k and baseline_s must be positive")
        if not 0 <= self.min_label_r <= 1:
            raise InvalidArgumentError("min_label_r must lie in [0, 1]")


@dataclass(frozen=True)
class DelayEstimate:
    lag_ms: float
    peak_correlation: float
    search_window_ms: float


def lagged_pearson(x, y, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Pearson r between ``x[t]`` and ``y[t + lag]`` on their overlap, for each lag.

    Returns ``(lags, r)`` for lags ``-max_lag..max_lag``. A positive peak lag
    means ``y`` trails ``x``. Lags whose overlap has zero variance get r = 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if y.shape[0] != n:
        raise InvalidArgumentError(f"length mismatch: {n} vs {y.shape[0]}")
    max_lag = int(min(max_lag, n - 2))
    x = x - x.mean()
    y = y - y.mean()
    lags = np.arange(-max_lag, max_lag + 1)
    full = signal.correlate(y, x, mode="full", method="fft")
    sxy = full[lags + n - 1]
    cx = np.concatenate([[0.0], np.cumsum(x)])
    cy = np.concatenate([[0.0], np.cumsum(y)])
    cxx = np.concatenate([[0.0], np.cumsum(x * x)])
    cyy = np.concatenate([[0.0], np.cumsum(y * y)])
    # overlap: x[xs:xe] against y[xs+lag:xe+lag]
    xs = np.maximum(0, -lags)
    xe = n - np.maximum(0, lags)
    ys, ye = xs + lags, xe + lags
    m = (xe - xs).astype(np.float64)
    sx, sy = cx[xe] - cx[xs], cy[ye] - cy[ys]
    vx = (cxx[xe] - cxx[xs]) - sx * sx / m
    vy = (cyy[ye] - cyy[ys]) - sy * sy / m
    cov = sxy - sx * sy / m
    denom = np.sqrt(np.clip(vx, 0, None) * np.clip(vy, 0, None))
    scale = max(float(cxx[-1]), float(cyy[-1]), np.finfo(float).tiny)
    ok = denom > 1e-12 * scale
    r = np.zeros_like(cov)
    r[ok] = np.clip(cov[ok] / denom[ok], -1.0, 1.0)
    return lags, r


def peak_abs_correlation(x, y, max_lag: int) -> tuple[float, int]:
    lags, r = lagged_pearson(x, y, max_lag)
    i = int(np.argmax(np.abs(r)))
    return float(abs(r[i])), int(lags[i])


def assign_components(ica: IcaResult, au6_cv: LabelTrack, au12_cv: LabelTrack,
                      noise_seed: int, max_lag_s: float = 1.0) -> AuAssignment:
    """Greedy AU12-then-AU6 assignment of ICs by peak lagged correlation.

    The uniform-noise reference is only reported; it does not affect the
    assignment. CV tracks must already be at the IC rate and length.
    """
    sources = ica.sources
    n = sources.shape[1]
    for t in (au6_cv, au12_cv):
        if len(t) != n:
            raise InvalidArgumentError(f"{t.au_id} track has {len(t)} samples, ICs have {n}")
    if sources.shape[0] != 3:
        raise InvalidArgumentError("assignment expects exactly three components")
    noise = np.random.default_rng(noise_seed).uniform(size=n)
    refs = (au6_cv.values, au12_cv.values, noise)
    max_lag = int(round(max_lag_s * ica.rate_hz))
    corr = np.zeros((3, 3))
    lags = np.zeros((3, 3), dtype=np.int64)
    for i in range(3):
        for j, ref in enumerate(refs):
            corr[i, j], lags[i, j] = peak_abs_correlation(sources[i], ref, max_lag)
    au12 = int(np.argmax(corr[:, 1]))
    rest = [i for i in range(3) if i != au12]
    au6 = rest[int(np.argmax(corr[rest, 0]))]
    noise_ic = next(i for i in rest if i != au6)
    return AuAssignment({"AU12": au12, "AU6": au6, "NOISE": noise_ic}, corr, lags, noise_seed)


def threshold_activity(ic, rate_hz: float, cfg: ThresholdConfig = ThresholdConfig(),
                       sg: SgConfig = SgConfig(), au_id: str = "AU") -> LabelTrack:
    """Binarise a component against its resting baseline.

    The component is Savitzky-Golay smoothed; mean and SD of the first
    ``baseline_s`` seconds define the threshold ``mean + k * max(SD, floor)``,
    and samples strictly above it are marked active.
    """
    x = np.asarray(ic, dtype=np.float64)
    n_base = int(round(cfg.baseline_s * rate_hz))
    if x.shape[0] < max(sg.window, n_base) or n_base < 1:
        raise InvalidArgumentError(
            f"{x.shape[0]} samples is too short for window {sg.window} and "
            f"{n_base}-sample baseline")
    smooth = savitzky_golay(x, sg)
    base = smooth[:n_base]
    thr = base.mean() + cfg.k * max(base.std(), cfg.sigma_floor)
    return LabelTrack((smooth > thr).astype(np.float64), rate_hz, au_id,
                      Modality.EMG, Kind.BINARY)


def estimate_delay(reference, target, rate_hz: float, window_ms: float = 2000.0) -> DelayEstimate:
    """Lag of peak Pearson cross-correlation within +/- ``window_ms``.

    Positive ``lag_ms`` means ``reference`` leads ``target``.
    """
    x = np.asarray(reference, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    max_lag = int(round(window_ms * rate_hz / 1000.0))
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgumentError("reference and target must be equal-length vectors")
    if x.shape[0] < max_lag:
        raise InvalidArgumentError(f"series shorter than the {window_ms} ms search window")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateInputError("cannot estimate delay of a constant series")
    lags, r = lagged_pearson(x, y, max_lag)
    i = int(np.argmax(r))
    return DelayEstimate(float(lags[i] * 1000.0 / rate_hz), float(r[i]), float(window_ms))


@dataclass(frozen=True, eq=False)
class Detection:
    """Everything :func:`run_detection` computed for one block."""

    tracks: dict
    envelope: object
    ica: IcaResult
    assignment: AuAssignment
    cv_upsampled: dict


def prepare_cv(block: Block, au: str, rate_hz: float, n: int) -> LabelTrack:
    """CV continuous track for ``au`` at the EMG rate, trimmed or edge-padded to ``n``."""
    t = upsample_track(block.cv(au, Kind.CONTINUOUS), rate_hz)
    v = t.values[:n]
    if v.shape[0] < n:
        v = np.concatenate([v, np.full(n - v.shape[0], v[-1] if v.size else 0.0)])
    return t.with_values(v)


def run_detection(block: Block, seed: int = 42,
                  preprocess: PreprocessConfig = PreprocessConfig(),
                  threshold: ThresholdConfig = ThresholdConfig(),
                  sg: SgConfig = SgConfig(), ica_input: str = "envelope") -> Detection:
    """Preprocess, separate, assign and threshold one block.

    Human-coded tracks are never consulted. With ``ica_input="bandpassed"``
    ICA unmixes the band-passed EMG and each component is then rectified and
    low-passed, instead of unmixing the channel envelopes.
    """
    rec = block.emg
    if ica_input == "envelope":
        env = preprocess_emg(rec, preprocess)
        ica = fastica(env, 3, seed=seed)
    elif ica_input == "bandpassed":
        env = preprocess_emg(rec, preprocess)
        ica = fastica(bandpass_emg(rec, preprocess), 3, seed=seed)
        ica = replace(ica, sources=envelope(ica.sources, rec.rate_hz, preprocess))
    else:
        raise InvalidArgumentError(f"unknown ica_input {ica_input!r}")
    n = env.n_samples
    cv = {au: prepare_cv(block, au, rec.rate_hz, n) for au in ("AU6", "AU12")}
    assignment = assign_components(ica, cv["AU6"], cv["AU12"], noise_seed=seed + 1)
    tracks = {}
    max_lag = int(round(rec.rate_hz))
    for au in ("AU6", "AU12"):
        idx = assignment.component_of[au]
        ic = ica.sources[idx]
        # orient so that activity correlates positively with the camera label
        lags, r = lagged_pearson(ic, cv[au].values, max_lag)
        peak = r[np.argmax(np.abs(r))]
        if abs(peak) < threshold.min_label_r:
            # the camera never saw this AU move in step with any component
            tracks[au] = LabelTrack(np.zeros(n), rec.rate_hz, au, Modality.EMG, Kind.BINARY)
            continue
        if peak < 0:
            ic = -ic
        tracks[au] = threshold_activity(ic, rec.rate_hz, threshold, sg, au_id=au)
    return Detection(tracks, env, ica, assignment, cv)


def detect_aus(block: Block, seed: int = 42, **kwargs) -> dict:
    """Binary EMG-derived AU6 and AU12 tracks at the EMG rate."""
    return run_detection(block, seed, **kwargs).tracks


def emg_vs_cv_delay(block: Block, au: str = "AU12", window_ms: float = 2000.0,
                    preprocess: PreprocessConfig = PreprocessConfig()) -> DelayEstimate:
    """Delay between EMG channel envelopes and a CV label; best channel wins."""
    env = preprocess_emg(block.emg, preprocess)
    cv = prepare_cv(block, au, block.emg.rate_hz, env.n_samples)
    estimates = [estimate_delay(ch, cv.values, block.emg.rate_hz, window_ms)
                 for ch in env.samples if np.ptp(ch) > 0]
    if not estimates:
        raise DegenerateInputError("all EMG channels are constant")
    return max(estimates, key=lambda d: d.peak_correlation)

