from itertools import permutations

import numpy as np
import pytest
from scipy.stats import skew

from facesynergy.bss import amari_index, fastica, whiten
from facesynergy.core import Recording
from facesynergy.errors import DegenerateInputError
from facesynergy.synth import SynthConfig, generate_envelopes, random_mixing


def matched_abs_r(est, true):
    """Per-source |Pearson r| under the best one-to-one pairing (exhaustive oracle)."""
    k = true.shape[0]
    c = np.abs(np.corrcoef(np.vstack([est, true]))[:k, k:])
    best = max(permutations(range(k)), key=lambda p: sum(c[p[j], j] for j in range(k)))
    return np.array([c[best[j], j] for j in range(k)])


def uniform_sources(n, k, seed):
    return np.random.default_rng(seed).uniform(-np.sqrt(3), np.sqrt(3), size=(k, n))


class TestWhiten:
    def test_already_white(self):
        x = uniform_sources(20000, 2, 0)
        x = (x - x.mean(1, keepdims=True)) / x.std(1, keepdims=True)
        # decorrelate exactly so the input covariance is the identity
        c = np.cov(x, bias=True)
        vals, vecs = np.linalg.eigh(c)
        x = vecs @ np.diag(vals ** -0.5) @ vecs.T @ x
        z, w = whiten(x, 2)
        assert np.allclose(np.cov(z, bias=True), np.eye(2), atol=1e-8)
        # whitener is orthogonal: identity up to rotation and sign
        assert np.allclose(w @ w.T, np.eye(2), atol=1e-6)

    def test_identical_channels_degenerate(self):
        x = np.random.default_rng(1).standard_normal(1000)
        with pytest.raises(DegenerateInputError):
            whiten(np.vstack([x, x]), 2)

    def test_random_4x10000(self):
        x = np.random.default_rng(2).standard_normal((4, 10000))
        z, w = whiten(x, 3)
        assert z.shape == (3, 10000) and w.shape == (3, 4)
        assert np.allclose(np.cov(z, bias=True), np.eye(3), atol=1e-6)

    def test_keeps_strongest_directions(self):
        r = np.random.default_rng(3)
        x = np.diag([5.0, 3.0, 1.0, 0.1]) @ r.standard_normal((4, 5000))
        _, w = whiten(x, 3)
        # the weakest channel barely contributes to the retained directions
        assert np.abs(w[:, 3]).max() < 0.2 * np.abs(w).max()


class TestFastIca:
    def test_identity_mixing(self):
        s = np.random.default_rng(4).laplace(size=(3, 20000))
        s = (s - s.mean(1, keepdims=True)) / s.std(1, keepdims=True)
        res = fastica(s, 3, seed=0)
        assert matched_abs_r(res.sources, s).min() >= 0.999

    def test_two_uniform_sources(self):
        s = uniform_sources(20000, 2, 5)
        x = np.array([[2.0, 1.0], [1.0, 2.0]]) @ s
        res = fastica(x, 2, seed=1)
        assert matched_abs_r(res.sources, s).min() >= 0.99

    def test_envelope_benchmark(self):
        means, amari = [], []
        for seed in range(20):
            src, _ = generate_envelopes(SynthConfig(seed=seed))
            a = random_mixing(np.random.default_rng(seed))
            res = fastica(Recording(a @ src, 1000.0), 3, seed=seed)
            means.append(matched_abs_r(res.sources, src).mean())
            amari.append(amari_index(res.unmixing @ a @ np.diag(src.std(axis=1))))
        assert np.mean(means) >= 0.9
        assert np.mean(amari) < 0.15

    def test_result_invariants(self):
        r = np.random.default_rng(6)
        s = r.exponential(size=(3, 15000))
        a = r.uniform(0.2, 1.0, size=(4, 3))
        res = fastica(a @ s, 3, seed=3)
        src = res.sources
        assert np.allclose(src.mean(axis=1), 0.0, atol=1e-10)
        assert np.allclose(src.std(axis=1), 1.0, atol=1e-8)
        corr = np.corrcoef(src)
        assert np.abs(corr[np.triu_indices(3, 1)]).max() < 1e-6
        assert np.allclose(res.unmixing @ res.mixing, np.eye(3), atol=1e-6)
        assert np.allclose(res.rotation @ res.whitener, res.unmixing)
        assert np.allclose(res.unmixing @ (a @ s - res.mean[:, None]), src, atol=1e-8)
        assert np.all(skew(src, axis=1) >= 0)

    def test_deterministic(self):
        x = np.random.default_rng(7).exponential(size=(4, 5000))
        assert fastica(x, 3, seed=11) == fastica(x, 3, seed=11)

    def test_not_converged_is_not_an_error(self):
        x = np.random.default_rng(8).exponential(size=(4, 5000))
        res = fastica(x, 3, seed=0, max_iter=1, tol=0.0)
        assert res.converged is False and res.iterations == 1

    def test_degenerate_input(self):
        x = np.random.default_rng(9).standard_normal(3000)
        with pytest.raises(DegenerateInputError):
            fastica(np.vstack([x, 2 * x, -x, x]), 3)


def test_amari_index_zero_for_scaled_permutation():
    p = np.array([[0, 2.0, 0], [0, 0, -0.5], [3.0, 0, 0]])
    assert amari_index(p) == 0.0
    assert amari_index(np.ones((3, 3))) == pytest.approx(1.0)
