"""AU6/AU12 co-occurrence patterns, onset-aligned profiles and cross-modal synergy matching."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Condition, LabelTrack, Modality, runs
from .errors import DegenerateInputError, InvalidArgumentError
from .labeling import lagged_pearson
from .synth import PATTERNS

SWAPPED = {
    "AU6_ONLY": "AU12_ONLY",
    "AU12_ONLY": "AU6_ONLY",
    "AU12_INSIDE_AU6": "AU6_INSIDE_AU12",
    "AU6_INSIDE_AU12": "AU12_INSIDE_AU6",
    "AU12_BEFORE_AU6": "AU6_BEFORE_AU12",
    "AU6_BEFORE_AU12": "AU12_BEFORE_AU6",
}


@dataclass(frozen=True)
class CooccurrenceSummary:
    """Event counts per pattern. ``ties`` counts events whose AU6 and AU12 spans
    were identical (classified as AU12_INSIDE_AU6)."""

    counts: dict
    condition: Condition | None = None
    modality: Modality | None = None
    ties: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def percentages(self) -> dict:
        total = self.total
        return {p: (100.0 * c / total if total else 0.0) for p, c in self.counts.items()}


@dataclass(frozen=True, eq=False)
class OnsetProfile:
    probabilities: np.ndarray
    pre_s: float
    dur_s: float
    n_events: int
    rate_hz: float
    support: np.ndarray = field(repr=False, default=None)

    @property
    def offsets_s(self) -> np.ndarray:
        return np.arange(self.probabilities.shape[0]) / self.rate_hz - self.pre_s


@dataclass(frozen=True, eq=False)
class SynergyMatch:
    pairing: dict
    scores: np.ndarray
    method: str


def _check_pair(a: LabelTrack, b: LabelTrack):
    if not (a.is_binary and b.is_binary):
        raise InvalidArgumentError("co-occurrence analysis needs BINARY tracks")
    if a.rate_hz != b.rate_hz or len(a) != len(b):
        raise InvalidArgumentError("AU6 and AU12 tracks are not aligned")


def _classify_group(au6_runs, au12_runs) -> tuple[str, bool]:
    if not au12_runs:
        return "AU6_ONLY", False
    if not au6_runs:
        return "AU12_ONLY", False
    s6, e6 = min(r[0] for r in au6_runs), max(r[1] for r in au6_runs)
    s12, e12 = min(r[0] for r in au12_runs), max(r[1] for r in au12_runs)
    if s6 <= s12 and e12 <= e6:
        return "AU12_INSIDE_AU6", (s6, e6) == (s12, e12)
    if s12 <= s6 and e6 <= e12:
        return "AU6_INSIDE_AU12", False
    return ("AU6_BEFORE_AU12" if s6 < s12 else "AU12_BEFORE_AU6"), False


def cooccurrence_events(au6, au12) -> list[tuple[list, list]]:
    """Group active runs of both tracks into events by transitive overlap."""
    tagged = sorted([(int(s), int(e), 6) for s, e in runs(au6)]
                    + [(int(s), int(e), 12) for s, e in runs(au12)])
    events = []
    reach = -1
    for s, e, au in tagged:
        if s >= reach:
            events.append(([], []))
        events[-1][0 if au == 6 else 1].append((s, e))
        reach = max(reach, e) if s < reach else e
    return events


def classify_cooccurrence(au6: LabelTrack, au12: LabelTrack, condition=None,
                          modality=None) -> CooccurrenceSummary:
    """Count the six AU6/AU12 activation patterns.

    Runs from both tracks sharing at least one sample belong to the same event
    (transitively). Within an event the AU6 and AU12 spans are compared:
    containment gives ``*_INSIDE_*``, partial overlap gives ``*_BEFORE_*`` by
    earlier onset, and identical spans count as AU12_INSIDE_AU6.
    """
    _check_pair(au6, au12)
    counts = dict.fromkeys(PATTERNS, 0)
    ties = 0
    for r6, r12 in cooccurrence_events(au6.values, au12.values):
        pattern, tie = _classify_group(r6, r12)
        counts[pattern] += 1
        ties += tie
    return CooccurrenceSummary(
        counts,
        Condition(condition) if condition is not None else None,
        Modality(modality) if modality is not None else None,
        ties)


def onset_aligned_profile(au6: LabelTrack, au12: LabelTrack, pre_s: float = 0.5,
                          dur_s: float = 1.0) -> OnsetProfile:
    """Probability of AU6 activity around each AU12 onset.

    Onsets are 0->1 transitions of AU12 (a run already active at the first
    sample is not an onset). Windows cut off by the track ends contribute only
    their defined samples; ``support`` holds the per-offset sample count.
    """
    _check_pair(au6, au12)
    rate = au12.rate_hz
    pre_n = int(round(pre_s * rate))
    length = int(round((pre_s + dur_s) * rate)) + 1
    v12 = au12.values > 0
    onsets = np.flatnonzero(v12[1:] & ~v12[:-1]) + 1
    total = np.zeros(length)
    support = np.zeros(length)
    n = len(au6)
    for t in onsets:
        idx = np.arange(length) + t - pre_n
        ok = (idx >= 0) & (idx < n)
        total[ok] += au6.values[idx[ok]]
        support[ok] += 1
    prob = np.divide(total, support, out=np.zeros(length), where=support > 0)
    return OnsetProfile(prob, pre_s, dur_s, int(onsets.size), rate, support)


def _greedy(scores: np.ndarray) -> dict:
    pairing = {}
    s = scores.astype(np.float64).copy()
    for _ in range(min(s.shape)):
        i, j = np.unravel_index(np.argmax(s), s.shape)
        pairing[int(i)] = int(j)
        s[i, :] = -np.inf
        s[:, j] = -np.inf
    return pairing


def temporal_match(cv_h, emg_h, rate_hz: float = 30.0, max_lag_s: float = 1.0) -> SynergyMatch:
    """Pair CV and EMG activation rows by peak lagged Pearson correlation, greedily."""
    a = np.atleast_2d(np.asarray(cv_h, dtype=np.float64))
    b = np.atleast_2d(np.asarray(emg_h, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"activation lengths differ: {a.shape[1]} vs {b.shape[1]}")
    for m in (a, b):
        if np.any(np.ptp(m, axis=1) == 0):
            raise DegenerateInputError("an activation row is constant")
    max_lag = int(round(max_lag_s * rate_hz))
    scores = np.array([[lagged_pearson(x, y, max_lag)[1].max() for y in b] for x in a])
    return SynergyMatch(_greedy(scores), scores, "TEMPORAL")


def spatial_match(cv_w, emg_w) -> SynergyMatch:
    """Pair weight columns by cosine similarity, greedily."""
    a = np.asarray(cv_w, dtype=np.float64)
    b = np.asarray(emg_w, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise InvalidArgumentError(f"weight matrices must share a row count: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a, axis=0), np.linalg.norm(b, axis=0)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateInputError("a weight column is all zero")
    scores = (a / na).T @ (b / nb)
    return SynergyMatch(_greedy(scores), scores, "SPATIAL")
