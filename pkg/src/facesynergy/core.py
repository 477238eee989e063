"""Signal and label containers plus the resampling helpers every stage relies on.

All containers are frozen dataclasses holding float64 numpy arrays that are
marked read-only, so they can be shared freely between threads.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError


class Modality(str, enum.Enum):
    HUMAN = "HUMAN"
    CV = "CV"
    EMG = "EMG"
    SYNTH_TRUTH = "SYNTH_TRUTH"


class Kind(str, enum.Enum):
    CONTINUOUS = "CONTINUOUS"
    BINARY = "BINARY"


class Condition(str, enum.Enum):
    POSED = "POSED"
    SPONTANEOUS = "SPONTANEOUS"


class EmptyOverlapWarning(UserWarning):
    """Two tracks share no samples after alignment."""


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise InvalidArgumentError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Recording:
    """Uniformly sampled multichannel signal, shape ``(channels, N)``."""

    samples: np.ndarray
    rate_hz: float
    channel_names: tuple[str, ...] = ()
    start_time_ms: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        samples = _frozen(samples, 2)
        if samples.shape[1] < 1:
            raise InvalidArgumentError("recording must contain at least one sample")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("recording contains non-finite values")
        if not self.rate_hz > 0:
            raise InvalidArgumentError(f"rate_hz must be positive, got {self.rate_hz}")
        names = tuple(self.channel_names) or tuple(f"ch{i + 1}" for i in range(samples.shape[0]))
        if len(names) != samples.shape[0]:
            raise InvalidArgumentError(
                f"{len(names)} channel names for {samples.shape[0]} channels")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "rate_hz", float(self.rate_hz))
        object.__setattr__(self, "channel_names", names)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_ms(self) -> float:
        return self.n_samples * 1000.0 / self.rate_hz

    def with_samples(self, samples) -> "Recording":
        return replace(self, samples=samples)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (self.rate_hz == other.rate_hz
                and self.channel_names == other.channel_names
                and self.start_time_ms == other.start_time_ms
                and np.array_equal(self.samples, other.samples))


@dataclass(frozen=True, eq=False)
class LabelTrack:
    """Per-AU label series, either continuous intensity or binary presence."""

    values: np.ndarray
    rate_hz: float
    au_id: str
    modality: Modality = Modality.CV
    kind: Kind = Kind.CONTINUOUS

    def __post_init__(self):
        values = _frozen(self.values, 1)
        if not self.rate_hz > 0:
            raise InvalidArgumentError(f"rate_hz must be positive, got {self.rate_hz}")
        kind = Kind(self.kind)
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError(f"{self.au_id}: non-finite label values")
        if kind is Kind.BINARY and not np.all((values == 0) | (values == 1)):
            raise InvalidArgumentError(f"{self.au_id}: binary track holds values outside {{0,1}}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "rate_hz", float(self.rate_hz))
        object.__setattr__(self, "au_id", canonical_au(self.au_id))
        object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "kind", kind)

    def __len__(self):
        return self.values.shape[0]

    @property
    def is_binary(self) -> bool:
        return self.kind is Kind.BINARY

    def with_values(self, values, **changes) -> "LabelTrack":
        return replace(self, values=values, **changes)

    def __eq__(self, other):
        if not isinstance(other, LabelTrack):
            return NotImplemented
        return (self.rate_hz == other.rate_hz and self.au_id == other.au_id
                and self.modality == other.modality and self.kind == other.kind
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class Block:
    """One experimental block: EMG plus the label tracks recorded alongside it."""

    id: str
    condition: Condition
    emg: Recording
    cv_tracks: tuple[LabelTrack, ...] = ()
    human_tracks: tuple[LabelTrack, ...] = ()
    truth_tracks: tuple[LabelTrack, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "condition", Condition(self.condition))
        for name in ("cv_tracks", "human_tracks", "truth_tracks"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def cv(self, au_id: str, kind: Kind = Kind.CONTINUOUS) -> LabelTrack:
        return find_track(self.cv_tracks, au_id, kind)

    def truth(self, au_id: str) -> LabelTrack:
        return find_track(self.truth_tracks, au_id, Kind.BINARY)


def canonical_au(name: str) -> str:
    """``"AU06"``, ``"au6"`` and ``"AU6"`` all map to ``"AU6"``; other ids are upper-cased."""
    name = name.strip().upper()
    if name.startswith("AU") and name[2:].isdigit():
        return f"AU{int(name[2:])}"
    return name


def find_track(tracks, au_id: str, kind: Kind | None = None) -> LabelTrack:
    au_id = canonical_au(au_id)
    for t in tracks:
        if t.au_id == au_id and (kind is None or t.kind is Kind(kind)):
            return t
    raise KeyError(f"no {kind.value if kind else ''} track for {au_id}".replace("  ", " "))


def _check_rates(*rates):
    for r in rates:
        if not r > 0:
            raise InvalidArgumentError(f"sampling rates must be positive, got {r}")


def upsample_track(track: LabelTrack, target_rate_hz: float) -> LabelTrack:
    """Resample a track onto a finer uniform grid.

    Binary tracks use a zero-order hold on timestamps (output sample ``i`` takes
    the last source frame at or before ``i / target``), which is exact at the
    frame grid and does not drift for non-integer ratios such as 1000/30.
    Continuous tracks are linearly interpolated and held at the last value past
    the final source sample.
    """
    _check_rates(track.rate_hz, target_rate_hz)
    if target_rate_hz < track.rate_hz:
        raise InvalidArgumentError(
            f"target rate {target_rate_hz} Hz is below source rate {track.rate_hz} Hz")
    n = len(track)
    n_out = int(round(n * target_rate_hz / track.rate_hz))
    if n == 0:
        return track.with_values(np.zeros(0), rate_hz=target_rate_hz)
    # position of each output sample on the source index axis
    pos = np.arange(n_out) * (track.rate_hz / target_rate_hz)
    if track.is_binary:
        idx = np.floor(pos + 1e-9).astype(np.int64)
        out = track.values[np.clip(idx, 0, n - 1)]
    else:
        out = np.interp(pos, np.arange(n), track.values)
    return track.with_values(out, rate_hz=target_rate_hz)


def _window_bounds(n_in: int, ratio: float) -> np.ndarray:
    n_out = int(round(n_in / ratio))
    bounds = np.round(np.arange(n_out + 1) * ratio).astype(np.int64)
    return np.clip(bounds, 0, n_in)


def downsample_binary_majority(track: LabelTrack, target_rate_hz: float) -> LabelTrack:
    """Majority-vote decimation of a binary track; ties resolve to 1."""
    if not track.is_binary:
        raise InvalidArgumentError("majority downsampling needs a BINARY track")
    _check_rates(track.rate_hz, target_rate_hz)
    if target_rate_hz > track.rate_hz:
        raise InvalidArgumentError(
            f"target rate {target_rate_hz} Hz exceeds source rate {track.rate_hz} Hz")
    bounds = _window_bounds(len(track), track.rate_hz / target_rate_hz)
    csum = np.concatenate([[0.0], np.cumsum(track.values)])
    ones = csum[bounds[1:]] - csum[bounds[:-1]]
    width = (bounds[1:] - bounds[:-1]).astype(np.float64)
    out = (2.0 * ones >= width) & (width > 0)
    return track.with_values(out.astype(np.float64), rate_hz=target_rate_hz)


def align_tracks(a: LabelTrack, b: LabelTrack) -> tuple[LabelTrack, LabelTrack]:
    """Trim two equal-rate tracks to their common length.

    Emits :class:`EmptyOverlapWarning` when the common length is zero.
    """
    if a.rate_hz != b.rate_hz:
        raise InvalidArgumentError(f"cannot align tracks at {a.rate_hz} Hz and {b.rate_hz} Hz")
    n = min(len(a), len(b))
    if n == 0:
        warnings.warn(f"{a.au_id}/{b.au_id}: tracks have no samples in common",
                      EmptyOverlapWarning, stacklevel=2)
    if len(a) != n:
        a = a.with_values(a.values[:n])
    if len(b) != n:
        b = b.with_values(b.values[:n])
    return a, b


def to_rate(track: LabelTrack, rate_hz: float) -> LabelTrack:
    """Bring a track to ``rate_hz`` with the direction-appropriate resampler."""
    if rate_hz == track.rate_hz:
        return track
    if rate_hz > track.rate_hz:
        return upsample_track(track, rate_hz)
    if track.is_binary:
        return downsample_binary_majority(track, rate_hz)
    raise InvalidArgumentError("continuous tracks are only ever upsampled")


def runs(values) -> np.ndarray:
    """Active runs of a binary vector as an ``(n, 2)`` array of [start, stop)."""
    v = np.asarray(values) > 0
    edges = np.diff(np.concatenate([[0], v.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return np.column_stack([starts, stops]).astype(np.int64)
