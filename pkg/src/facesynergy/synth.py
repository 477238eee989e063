"""Synthetic sessions with known sources, mixing, events and labels.

The forward model: three envelopes (AU6, AU12, OTHER) modulate independent
band-limited noise carriers, a static positive 4x3 matrix mixes them onto the
electrodes, and white sensor noise is added at a requested SNR. The camera
sees the same envelopes ``emg_lead_ms`` later, sampled at the video rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .core import Block, Condition, Kind, LabelTrack, Modality, Recording
from .errors import InvalidArgumentError

PATTERNS = (
    "AU6_ONLY",
    "AU12_ONLY",
    "AU12_INSIDE_AU6",
    "AU6_INSIDE_AU12",
    "AU12_BEFORE_AU6",
    "AU6_BEFORE_AU12",
)
SOURCE_NAMES = ("AU6", "AU12", "OTHER")
CV_AUS = ("AU6", "AU7", "AU10", "AU12")

RISE_MS = 200.0
LEAD_IN_MS = 2000.0
TAIL_MS = 1500.0
MIN_GAP_MS = 1200.0
CV_SCALE = 3.0
CV_PRESENCE = 1.0


@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 90.0
    emg_rate_hz: float = 1000.0
    video_rate_hz: float = 30.0
    n_events: int = 12
    event_kinds: dict | None = None
    emg_lead_ms: float = 374.0
    snr_db: float = 10.0
    mixing: np.ndarray | None = None
    seed: int = 0
    other_rate_per_min: float = 6.0
    condition: Condition = Condition.SPONTANEOUS
    cv_noise: float = 0.05

    def __post_init__(self):
        if not self.duration_s > 0:
            raise InvalidArgumentError("duration_s must be positive")
        if not (self.emg_rate_hz > 0 and self.video_rate_hz > 0):
            raise InvalidArgumentError("rates must be positive")
        if self.n_events < 0:
            raise InvalidArgumentError("n_events must be >= 0")
        if self.mixing is not None:
            m = np.asarray(self.mixing, dtype=np.float64)
            if m.shape != (4, 3) or np.any(m <= 0):
                raise InvalidArgumentError("mixing must be a strictly positive 4x3 matrix")
            if np.linalg.svd(m, compute_uv=False).min() < 0.2:
                raise InvalidArgumentError("mixing is too ill-conditioned (min singular value < 0.2)")

    def kind_probabilities(self) -> np.ndarray:
        if self.event_kinds is None:
            return np.array([4.0, 4.0, 1.0, 1.0, 1.0, 1.0]) / 12.0
        p = np.array([float(self.event_kinds.get(k, 0.0)) for k in PATTERNS])
        unknown = set(self.event_kinds) - set(PATTERNS)
        if unknown or np.any(p < 0) or p.sum() <= 0:
            raise InvalidArgumentError(f"bad event_kinds {self.event_kinds!r}")
        return p / p.sum()


@dataclass(frozen=True)
class Event:
    """A scripted co-occurrence event. Intervals are [onset, offset) in ms at half amplitude."""

    pattern: str
    onset_ms: float
    offset_ms: float
    au6: tuple[float, float] | None = None
    au12: tuple[float, float] | None = None


@dataclass(frozen=True, eq=False)
class SyntheticSession:
    block: Block
    true_sources: np.ndarray
    true_mixing: np.ndarray
    event_log: tuple[Event, ...]
    config: SynthConfig = field(repr=False, default=None)


def random_mixing(rng: np.random.Generator) -> np.ndarray:
    """Positive 4x3 volume-conduction matrix, each source strongest on its own electrode."""
    while True:
        m = rng.uniform(0.1, 0.5, size=(4, 3))
        dominant = rng.permutation(4)[:3]
        m[dominant, np.arange(3)] += rng.uniform(0.8, 1.2, size=3)
        if np.linalg.svd(m, compute_uv=False).min() >= 0.2:
            return m


def _trapezoid(t_ms: np.ndarray, onset: float, offset: float, amp: float,
               rise_ms: float = RISE_MS) -> np.ndarray:
    # half amplitude is reached exactly at onset and offset
    half = rise_ms / 2.0
    up = np.clip((t_ms - (onset - half)) / rise_ms, 0.0, 1.0)
    down = np.clip(((offset + half) - t_ms) / rise_ms, 0.0, 1.0)
    return amp * np.minimum(up, down)


def _script_event(pattern: str, start: float, rng: np.random.Generator) -> Event:
    """Lay out one event beginning (at half amplitude) at ``start`` ms."""
    u = lambda lo, hi: float(np.round(rng.uniform(lo, hi)))  # noqa: E731
    if pattern == "AU6_ONLY":
        d = u(1000, 2500)
        return Event(pattern, start, start + d, au6=(start, start + d))
    if pattern == "AU12_ONLY":
        d = u(1000, 2500)
        return Event(pattern, start, start + d, au12=(start, start + d))
    if pattern in ("AU12_INSIDE_AU6", "AU6_INSIDE_AU12"):
        outer = u(2000, 3500)
        pre, post = u(400, 800), u(400, 800)
        outer_iv = (start, start + outer)
        inner_iv = (start + pre, start + outer - post)
        if pattern == "AU12_INSIDE_AU6":
            return Event(pattern, start, start + outer, au6=outer_iv, au12=inner_iv)
        return Event(pattern, start, start + outer, au6=inner_iv, au12=outer_iv)
    if pattern in ("AU12_BEFORE_AU6", "AU6_BEFORE_AU12"):
        first = u(1200, 2200)
        lag = u(500, first - 500)
        second = u(first - lag + 500, first - lag + 1500)
        a = (start, start + first)
        b = (start + lag, start + lag + second)
        end = max(a[1], b[1])
        if pattern == "AU12_BEFORE_AU6":
            return Event(pattern, start, end, au12=a, au6=b)
        return Event(pattern, start, end, au6=a, au12=b)
    raise InvalidArgumentError(f"unknown pattern {pattern!r}")


def stratified_counts(n: int, p: np.ndarray) -> np.ndarray:
    """Pattern index per event, with counts proportional to ``p`` (largest remainder)."""
    exact = n * p
    counts = np.floor(exact).astype(int)
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:n - counts.sum()]] += 1
    return np.repeat(np.arange(len(p)), counts)


def _schedule(cfg: SynthConfig, rng: np.random.Generator) -> list[Event]:
    if cfg.n_events == 0:
        return []
    kinds = rng.permutation(stratified_counts(cfg.n_events, cfg.kind_probabilities()))
    events = [_script_event(PATTERNS[k], 0.0, rng) for k in kinds]
    lengths = np.array([e.offset_ms - e.onset_ms for e in events])
    usable = cfg.duration_s * 1000.0 - LEAD_IN_MS - TAIL_MS
    slack = usable - lengths.sum() - MIN_GAP_MS * (len(events) - 1)
    if slack < 0:
        raise InvalidArgumentError(
            f"{cfg.n_events} events do not fit into {cfg.duration_s} s")
    # distribute the slack randomly over the gaps
    extra = np.floor(rng.dirichlet(np.ones(len(events) + 1)) * slack)
    placed = []
    t = LEAD_IN_MS + extra[0]
    for e, length, gap in zip(events, lengths, extra[1:]):
        shift = lambda iv: None if iv is None else (iv[0] + t, iv[1] + t)  # noqa: E731
        placed.append(Event(e.pattern, e.onset_ms + t, e.offset_ms + t,
                            au6=shift(e.au6), au12=shift(e.au12)))
        t += length + MIN_GAP_MS + gap
    return placed


def generate_envelopes(cfg: SynthConfig) -> tuple[np.ndarray, tuple[Event, ...]]:
    """Trapezoidal AU6/AU12/OTHER envelopes at the EMG rate plus the event log."""
    rng = np.random.default_rng([cfg.seed, 1])
    n = int(round(cfg.duration_s * cfg.emg_rate_hz))
    t_ms = np.arange(n) * 1000.0 / cfg.emg_rate_hz
    sources = np.zeros((3, n))
    events = _schedule(cfg, rng)
    for e in events:
        for row, iv in ((0, e.au6), (1, e.au12)):
            if iv is not None:
                sources[row] += _trapezoid(t_ms, iv[0], iv[1], rng.uniform(0.6, 1.0))
    n_other = rng.poisson(cfg.other_rate_per_min * cfg.duration_s / 60.0)
    span = cfg.duration_s * 1000.0
    for _ in range(n_other):
        on = rng.uniform(LEAD_IN_MS, span - TAIL_MS)
        off = min(on + rng.uniform(300, 900), span - TAIL_MS)
        sources[2] = np.maximum(sources[2], _trapezoid(t_ms, on, off, rng.uniform(0.5, 1.0)))
    return sources, tuple(events)


def band_limited_noise(rng: np.random.Generator, n: int, rate_hz: float,
                       low_hz: float = 15.0, high_hz: float = 450.0) -> np.ndarray:
    high_hz = min(high_hz, 0.45 * rate_hz)
    sos = signal.butter(4, [low_hz, high_hz], btype="bandpass", fs=rate_hz, output="sos")
    c = signal.sosfiltfilt(sos, rng.standard_normal(n))
    return c / c.std()


def _interval_track(intervals, n: int, rate_hz: float) -> np.ndarray:
    t_ms = np.arange(n) * 1000.0 / rate_hz
    out = np.zeros(n)
    for on, off in intervals:
        out[(t_ms >= on) & (t_ms < off)] = 1.0
    return out


def truth_intervals(events, au: str) -> list[tuple[float, float]]:
    key = {"AU6": "au6", "AU12": "au12"}[au]
    return [getattr(e, key) for e in events if getattr(e, key) is not None]


def generate_session(cfg: SynthConfig, block_id: str = "B1") -> SyntheticSession:
    """Full synthetic block: raw 4-channel EMG, OpenFace-like CV tracks, truth tracks."""
    sources, events = generate_envelopes(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    mixing = (np.asarray(cfg.mixing, dtype=np.float64) if cfg.mixing is not None
              else random_mixing(rng))
    n = sources.shape[1]
    carriers = np.stack([band_limited_noise(rng, n, cfg.emg_rate_hz) for _ in range(3)])
    clean = mixing @ (sources * carriers)
    noise = rng.standard_normal(clean.shape)
    if np.isfinite(cfg.snr_db):
        p_sig = np.mean(clean ** 2, axis=1, keepdims=True)
        p_noise = np.mean(noise ** 2, axis=1, keepdims=True)
        noise *= np.sqrt(p_sig / (p_noise * 10 ** (cfg.snr_db / 10.0)))
        emg = clean + noise
    else:
        emg = clean
    rec = Recording(emg, cfg.emg_rate_hz, ("ch1", "ch2", "ch3", "ch4"))

    # camera: delayed envelopes sampled at frame times
    n_video = int(round(cfg.duration_s * cfg.video_rate_hz))
    frame_ms = np.arange(n_video) * 1000.0 / cfg.video_rate_hz
    src_ms = np.arange(n) * 1000.0 / cfg.emg_rate_hz
    delayed = np.stack([np.interp(frame_ms - cfg.emg_lead_ms, src_ms, s, left=0.0, right=0.0)
                        for s in sources])
    au6, au12, other = delayed
    intensities = {
        "AU6": au6,
        "AU7": 0.6 * au6 + 0.2 * other,
        "AU10": 0.4 * au12 + 0.5 * other,
        "AU12": au12,
    }
    cv_tracks = []
    for au in CV_AUS:
        val = CV_SCALE * intensities[au] + cfg.cv_noise * CV_SCALE * rng.standard_normal(n_video)
        val = np.clip(val, 0.0, None)
        cv_tracks.append(LabelTrack(val, cfg.video_rate_hz, au, Modality.CV, Kind.CONTINUOUS))
    for au in CV_AUS:
        cont = cv_tracks[CV_AUS.index(au)].values
        cv_tracks.append(LabelTrack((cont > CV_PRESENCE).astype(float), cfg.video_rate_hz, au,
                                    Modality.CV, Kind.BINARY))

    truth = tuple(
        LabelTrack(_interval_track(truth_intervals(events, au), n, cfg.emg_rate_hz),
                   cfg.emg_rate_hz, au, Modality.SYNTH_TRUTH, Kind.BINARY)
        for au in ("AU6", "AU12"))
    block = Block(block_id, cfg.condition, rec, tuple(cv_tracks), (), truth)
    return SyntheticSession(block, sources, mixing, events, cfg)


@dataclass(frozen=True, eq=False)
class SynergyCorpus:
    """Blocks of non-negative label series built from known synergies."""

    blocks: tuple[np.ndarray, ...]
    weights: np.ndarray
    activations: tuple[np.ndarray, ...]


def _sparse_activation(rng, n: int, rate_hz: float, bursts_per_min: float) -> np.ndarray:
    t_ms = np.arange(n) * 1000.0 / rate_hz
    h = np.zeros(n)
    span = n * 1000.0 / rate_hz
    for _ in range(max(1, rng.poisson(bursts_per_min * span / 60000.0))):
        on = rng.uniform(0, span - 500)
        h = np.maximum(h, _trapezoid(t_ms, on, on + rng.uniform(500, 2500), rng.uniform(0.5, 1.0)))
    return h


def generate_synergy_corpus(n_synergies: int, seed: int, n_aus: int = 17, n_blocks: int = 2,
                            duration_s: float = 90.0, rate_hz: float = 30.0,
                            noise: float = 0.02, bursts_per_min: float = 5.0) -> SynergyCorpus:
    """CV-label-like matrices ``X = W H + noise`` with ``n_synergies`` true synergies.

    Each synergy drives a few AUs of its own; activations are sparse bursts,
    independent across synergies and rescaled so every synergy carries equal
    energy in every block. ``noise`` is the rectified-Gaussian noise level
    relative to the mean burst amplitude.
    """
    if not 1 <= n_synergies <= n_aus:
        raise InvalidArgumentError("need 1 <= n_synergies <= n_aus")
    rng = np.random.default_rng([seed, 3, n_synergies])
    w = np.zeros((n_aus, n_synergies))
    owners = rng.permutation(n_aus)
    per = max(1, min(4, n_aus // n_synergies))
    for j in range(n_synergies):
        mine = owners[j * per:(j + 1) * per]
        w[mine, j] = rng.uniform(0.5, 1.0, size=len(mine))
    w /= np.linalg.norm(w, axis=0)
    n = int(round(duration_s * rate_hz))
    blocks, acts = [], []
    for _ in range(n_blocks):
        h = np.stack([_sparse_activation(rng, n, rate_hz, bursts_per_min)
                      for _ in range(n_synergies)])
        h /= np.linalg.norm(h, axis=1, keepdims=True) / np.sqrt(n)
        x = w @ h + np.abs(noise * rng.standard_normal((n_aus, n)))
        blocks.append(x)
        acts.append(h)
    return SynergyCorpus(tuple(blocks), w, tuple(acts))
