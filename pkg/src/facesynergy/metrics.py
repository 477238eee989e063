"""Agreement statistics (Cohen's kappa and friends) and the Wilcoxon rank-sum test."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import LabelTrack
from .errors import DegenerateAgreementError, InvalidArgumentError

EXACT_MAX_N = 12


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise InvalidArgumentError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class AgreementReport:
    """Sample-wise agreement of a prediction against a reference.

    ``precision``/``recall`` are ``None`` when their denominator is zero; the
    matching ``*_defined`` flag is then False.
    """

    kappa: float
    accuracy: float
    precision: float | None
    recall: float | None
    n: int
    p_o: float
    p_e: float
    counts: ConfusionCounts

    @property
    def precision_defined(self) -> bool:
        return self.precision is not None

    @property
    def recall_defined(self) -> bool:
        return self.recall is not None


def confusion_counts(pred: LabelTrack, truth: LabelTrack) -> ConfusionCounts:
    """Sample-wise 2x2 counts of two aligned binary tracks."""
    if not (pred.is_binary and truth.is_binary):
        raise InvalidArgumentError("confusion counts need BINARY tracks")
    if pred.rate_hz != truth.rate_hz or len(pred) != len(truth):
        raise InvalidArgumentError(
            f"tracks not aligned: {len(pred)} @ {pred.rate_hz} Hz vs "
            f"{len(truth)} @ {truth.rate_hz} Hz")
    p = pred.values > 0
    t = truth.values > 0
    return ConfusionCounts(
        tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)), tn=int(np.sum(~p & ~t)))


def cohens_kappa(c: ConfusionCounts) -> AgreementReport:
    n = c.n
    if n < 1:
        raise InvalidArgumentError("no samples to compare")
    # integer numerators keep every ratio exact up to its single final division
    chance = (c.tp + c.fp) * (c.tp + c.fn) + (c.fn + c.tn) * (c.fp + c.tn)
    if chance == n * n:
        raise DegenerateAgreementError("both raters are constant; kappa undefined")
    p_o = (c.tp + c.tn) / n
    p_e = chance / (n * n)
    return AgreementReport(
        kappa=(n * (c.tp + c.tn) - chance) / (n * n - chance),
        accuracy=p_o,
        precision=c.tp / (c.tp + c.fp) if c.tp + c.fp else None,
        recall=c.tp / (c.tp + c.fn) if c.tp + c.fn else None,
        n=n,
        p_o=p_o,
        p_e=p_e,
        counts=c,
    )


def agreement(pred: LabelTrack, truth: LabelTrack) -> AgreementReport:
    return cohens_kappa(confusion_counts(pred, truth))


def midranks(values) -> np.ndarray:
    """1-based ranks with ties replaced by their average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class RankSumResult:
    """Rank sum ``w`` of the first sample, and its two-sided p-value."""

    w: float
    p: float
    exact: bool
    n_a: int
    n_b: int

    def __iter__(self):
        return iter((self.w, self.p))


def wilcoxon_rank_sum(a, b) -> RankSumResult:
    """Two-sided Wilcoxon rank-sum test; ``w`` is the midrank sum of ``a``.

    Up to 12 pooled observations the null distribution is enumerated over
    every assignment of ranks to ``a``. Beyond that a normal approximation with
    tie-corrected variance and a 0.5 continuity correction is used.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("both samples must be non-empty")
    n_a, n_b = a.size, b.size
    n = n_a + n_b
    ranks = midranks(np.concatenate([a, b]))
    w = float(ranks[:n_a].sum())
    mean = n_a * (n + 1) / 2.0
    dev = abs(w - mean)
    if n <= EXACT_MAX_N:
        # midranks are multiples of 0.5, so doubled sums compare exactly
        dev2 = round(2 * dev)
        hits = total = 0
        for idx in itertools.combinations(range(n), n_a):
            s2 = round(2 * ranks[list(idx)].sum())
            hits += abs(s2 - 2 * mean) >= dev2
            total += 1
        return RankSumResult(w, hits / total, True, n_a, n_b)
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return RankSumResult(w, 1.0, False, n_a, n_b)
    zed = max(dev - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, float(special.erfc(zed / math.sqrt(2.0))))
    return RankSumResult(w, p, False, n_a, n_b)
