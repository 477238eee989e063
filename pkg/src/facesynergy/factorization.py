"""Non-negative matrix factorisation, VAF, and synergy-count selection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, UndefinedRatioError

_EPS = 1e-12
# entries this small are flushed to zero; subnormals slow the updates ~10x
_FLUSH = 1e-150
_NEG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class NnmfResult:
    """``x ~= w @ h`` with unit-L2 columns in ``w``.

    ``objective_trace`` records the Frobenius error every ``check_every``
    iterations of the winning restart (first entry is the initial error).
    """

    w: np.ndarray
    h: np.ndarray
    vaf: float
    iterations: int
    objective: float
    objective_trace: np.ndarray = field(repr=False, default=None)
    restart: int = 0


@dataclass(frozen=True)
class VafCurve:
    per_k: tuple[tuple[int, float], ...]
    selected_k: int
    threshold: float = 0.85
    reached: bool = True


def vaf(x, w, h) -> float:
    """Uncentred variance accounted for, ``1 - ||x - wh||^2 / ||x||^2``."""
    x = np.asarray(x, dtype=np.float64)
    recon = np.asarray(w, dtype=np.float64) @ np.asarray(h, dtype=np.float64)
    if recon.shape != x.shape:
        raise InvalidArgumentError(f"w @ h has shape {recon.shape}, x has {x.shape}")
    total = float(np.sum(x * x))
    if total == 0.0:
        raise UndefinedRatioError("VAF undefined for an all-zero matrix")
    return 1.0 - float(np.sum((x - recon) ** 2)) / total


def _check_nonnegative(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidArgumentError("expected a 2-d matrix")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("matrix contains non-finite entries")
    if np.any(x < -_NEG_TOL):
        raise InvalidArgumentError("matrix has negative entries")
    return np.clip(x, 0.0, None)


def _normalise(w: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(w, axis=0)
    dead = norms == 0
    w = w / np.where(dead, 1.0, norms)
    h = h * norms[:, None]
    if np.any(dead):
        w[:, dead] = 1.0 / np.sqrt(w.shape[0])
        h[dead] = 0.0
    return w, h


def _multiplicative(x, w, h, max_iter, tol, check_every):
    """Run MU on a stack of restarts ``w: (R, m, k)``, ``h: (R, k, n)`` at once.

    Each restart stops independently when its relative error drop across
    ``check_every`` iterations falls to ``tol`` or below.
    """
    r_total = w.shape[0]
    err = np.linalg.norm(x - w @ h, axis=(1, 2))
    traces = [[e] for e in err]
    iters = np.full(r_total, max_iter)
    active = np.arange(r_total)
    for it in range(1, max_iter + 1):
        full = active.size == r_total
        # fancy indexing copies, so skip it while every restart is still running
        wa, ha = (w, h) if full else (w[active], h[active])
        wt = wa.transpose(0, 2, 1)
        ha *= (wt @ x) / (wt @ wa @ ha + _EPS)
        ha[ha < _FLUSH] = 0.0
        ht = ha.transpose(0, 2, 1)
        wa *= (x @ ht) / (wa @ (ha @ ht) + _EPS)
        wa[wa < _FLUSH] = 0.0
        if not full:
            w[active], h[active] = wa, ha
        if it % check_every == 0:
            new = np.linalg.norm(x - wa @ ha, axis=(1, 2))
            done = err[active] - new <= tol * np.maximum(err[active], _EPS)
            for r, e in zip(active, new):
                traces[r].append(e)
            err[active] = new
            iters[active[done]] = it
            active = active[~done]
            if active.size == 0:
                break
    return w, h, iters, [np.array(t) for t in traces]


def nnmf_factorize(x, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 1000,
                   tol: float = 1e-6, init: tuple | None = None,
                   check_every: int = 10) -> NnmfResult:
    """Lee-Seung multiplicative updates for the Frobenius loss, best of ``restarts``.

    Every restart draws its own uniform initialisation from a child of
    ``seed``; all restarts are iterated together as one stacked array. An
    explicit ``init=(w0, h0)`` is tried in addition to the random starts.
    Iteration stops once the relative drop of the error across
    ``check_every`` iterations falls below ``tol``. Ties between restarts go
    to the lower restart index.
    """
    x = _check_nonnegative(x)
    m, n = x.shape
    if not 1 <= k <= min(m, n):
        raise InvalidArgumentError(f"k={k} outside [1, {min(m, n)}]")
    if restarts < 1 and init is None:
        raise InvalidArgumentError("need at least one initialisation")
    scale = np.sqrt(x.mean() / k) if x.mean() > 0 else 1.0
    w_starts, h_starts = [], []
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        w_starts.append(rng.uniform(size=(m, k)) * scale)
        h_starts.append(rng.uniform(size=(k, n)) * scale)
    if init is not None:
        w0, h0 = (np.array(a, dtype=np.float64) for a in init)
        if w0.shape != (m, k) or h0.shape != (k, n) or np.any(w0 < 0) or np.any(h0 < 0):
            raise InvalidArgumentError("init factors have the wrong shape or sign")
        w_starts.append(w0)
        h_starts.append(h0)
    w, h, iters, traces = _multiplicative(x, np.stack(w_starts), np.stack(h_starts),
                                          max_iter, tol, check_every)
    objectives = np.linalg.norm(x - w @ h, axis=(1, 2))
    r = int(np.argmin(objectives))
    wr, hr = _normalise(w[r], h[r])
    return NnmfResult(w=wr, h=hr, vaf=vaf(x, wr, hr), iterations=int(iters[r]),
                      objective=float(objectives[r]), objective_trace=traces[r], restart=r)


def _grow(prev: NnmfResult, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # previous solution plus a faint extra component: MU from here cannot do worse
    m, n = x.shape
    floor = 1e-3 * np.sqrt(x.mean() / (prev.w.shape[1] + 1)) if x.mean() > 0 else 1e-3
    w0 = np.hstack([prev.w, np.full((m, 1), 1.0 / np.sqrt(m))])
    h0 = np.vstack([prev.h, np.full((1, n), floor)])
    return w0, h0


def select_synergy_count(blocks, k_max: int, threshold: float = 0.85, seed: int = 0,
                         restarts: int = 10, max_iter: int = 1000, tol: float = 1e-6,
                         k_min: int = 1) -> VafCurve:
    """Smallest synergy count whose VAF clears ``threshold`` in every block.

    Each block is factorised independently for ``k = k_min..k_max`` and the
    per-k value is the minimum VAF across blocks. The solution for ``k - 1``
    seeds one extra start at ``k``, so each block's curve cannot decrease
    beyond the update rule's numerical slack.
    """
    blocks = [_check_nonnegative(b) for b in blocks]
    if not blocks:
        raise InvalidArgumentError("no blocks to factorise")
    limit = min(min(b.shape) for b in blocks)
    if not 1 <= k_min <= k_max <= limit:
        raise InvalidArgumentError(f"k range [{k_min}, {k_max}] outside [1, {limit}]")
    seeds = np.random.SeedSequence(seed).spawn(len(blocks))
    per_k = []
    prev = [None] * len(blocks)
    for k in range(k_min, k_max + 1):
        vafs = []
        for b, (x, ss) in enumerate(zip(blocks, seeds)):
            init = _grow(prev[b], x) if prev[b] is not None else None
            block_seed = int(ss.generate_state(1)[0]) + k
            res = nnmf_factorize(x, k, seed=block_seed, restarts=restarts,
                                 max_iter=max_iter, tol=tol, init=init)
            prev[b] = res
            vafs.append(res.vaf)
        per_k.append((k, float(min(vafs))))
    for k, v in per_k:
        if v >= threshold:
            return VafCurve(tuple(per_k), k, threshold, True)
    return VafCurve(tuple(per_k), k_max, threshold, False)
