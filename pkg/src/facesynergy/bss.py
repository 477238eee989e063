"""Blind source separation of EMG envelopes with symmetric FastICA."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import Recording
from .errors import DegenerateInputError, InvalidArgumentError

_RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class IcaResult:
    """Outcome of :func:`fastica`.

    ``unmixing`` maps mean-centred input channels straight to sources
    (``rotation @ whitener``); ``rotation`` is the orthogonal matrix found in
    whitened space, and ``mixing`` is the pseudo-inverse of ``unmixing``.
    """

    sources: np.ndarray
    unmixing: np.ndarray
    mixing: np.ndarray
    whitener: np.ndarray
    rotation: np.ndarray
    mean: np.ndarray
    converged: bool
    iterations: int
    rate_hz: float = 1.0

    @property
    def n_components(self) -> int:
        return self.sources.shape[0]

    def __eq__(self, other):
        if not isinstance(other, IcaResult):
            return NotImplemented
        return (self.converged == other.converged and self.iterations == other.iterations
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("sources", "unmixing", "mixing", "whitener", "rotation", "mean")))


def _as_matrix(rec) -> tuple[np.ndarray, float]:
    if isinstance(rec, Recording):
        return rec.samples, rec.rate_hz
    x = np.asarray(rec, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError("expected a channels x samples matrix")
    return x, 1.0


def whiten(rec, n_components: int) -> tuple[np.ndarray, np.ndarray]:
    """PCA-whiten onto the ``n_components`` strongest principal directions.

    Returns ``(z, whitener)`` with ``z = whitener @ (x - mean)`` having identity
    sample covariance (population normalisation).
    """
    x, _ = _as_matrix(rec)
    m, n = x.shape
    if not 1 <= n_components <= m:
        raise InvalidArgumentError(f"n_components={n_components} not in [1, {m}]")
    if n <= m:
        raise InvalidArgumentError(f"need more samples ({n}) than channels ({m})")
    xc = x - x.mean(axis=1, keepdims=True)
    cov = xc @ xc.T / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    evals, evecs = evals[order], evecs[:, order]
    if evals[0] <= 0 or evals[-1] <= _RANK_TOL * evals[0]:
        raise DegenerateInputError(
            f"input has fewer than {n_components} independent directions")
    # fix eigenvector signs so the whitener is reproducible across LAPACK builds
    flip = np.sign(evecs[np.argmax(np.abs(evecs), axis=0), np.arange(n_components)])
    evecs = evecs * flip
    whitener = (evecs / np.sqrt(evals)).T
    return whitener @ xc, whitener


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


# E[log cosh(v)] for v ~ N(0, 1)
_GAUSS_LOGCOSH = 0.37456890086


def _logcosh(u: np.ndarray) -> np.ndarray:
    return np.logaddexp(u, -u) - np.log(2.0)


def negentropy(sources: np.ndarray) -> float:
    """Summed log-cosh negentropy approximation of unit-variance rows."""
    return float(np.sum((_logcosh(sources).mean(axis=1) - _GAUSS_LOGCOSH) ** 2))


def _fixed_point(z: np.ndarray, w: np.ndarray, max_iter: int, tol: float):
    n = z.shape[1]
    w = _sym_decorrelate(w)
    for it in range(1, max_iter + 1):
        g = np.tanh(w @ z)
        g_prime = 1.0 - g * g
        w_new = _sym_decorrelate(g @ z.T / n - g_prime.mean(axis=1)[:, None] * w)
        lim = np.max(np.abs(np.abs(np.einsum("ij,ij->i", w_new, w)) - 1.0))
        w = w_new
        if lim < tol:
            return w, True, it
    return w, False, max_iter


def fastica(rec, n_components: int = 3, seed: int = 0, max_iter: int = 500,
            tol: float = 1e-6, n_init: int = 5) -> IcaResult:
    """Symmetric fixed-point FastICA with the log-cosh contrast.

    The fixed-point iteration is started from ``n_init`` seeded random
    rotations and the run with the largest negentropy is kept, which guards
    against the occasional saddle point on sparse, mildly dependent sources.
    Each recovered source is sign-oriented to non-negative skewness. Hitting
    ``max_iter`` without meeting ``tol`` sets ``converged=False``; the last
    iterate is still returned.
    """
    if n_init < 1:
        raise InvalidArgumentError("n_init must be >= 1")
    x, rate = _as_matrix(rec)
    z, whitener = whiten(x, n_components)
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        w0 = np.random.default_rng(child).standard_normal((n_components, n_components))
        w, converged, it = _fixed_point(z, w0, max_iter, tol)
        score = negentropy(w @ z)
        if best is None or score > best[0]:
            best = (score, w, converged, it)
    _, w, converged, it = best
    sources = w @ z
    signs = np.where(stats.skew(sources, axis=1) < 0, -1.0, 1.0)
    w = w * signs[:, None]
    sources = sources * signs[:, None]
    unmixing = w @ whitener
    return IcaResult(
        sources=sources,
        unmixing=unmixing,
        mixing=np.linalg.pinv(unmixing),
        whitener=whitener,
        rotation=w,
        mean=x.mean(axis=1),
        converged=converged,
        iterations=it,
        rate_hz=rate,
    )


def amari_index(p: np.ndarray) -> float:
    """Normalised Amari index of a square gain matrix; 0 for a scaled permutation."""
    a = np.abs(np.asarray(p, dtype=np.float64))
    k = a.shape[0]
    rows = (a.sum(axis=1) / a.max(axis=1) - 1.0).sum()
    cols = (a.sum(axis=0) / a.max(axis=0) - 1.0).sum()
    return float((rows + cols) / (2.0 * k * (k - 1)))
