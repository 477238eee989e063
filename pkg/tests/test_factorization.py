import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.decomposition import NMF

from facesynergy.errors import InvalidArgumentError, UndefinedRatioError
from facesynergy.factorization import nnmf_factorize, select_synergy_count, vaf

seeds = st.integers(0, 2**32 - 1)


def oracle_vaf(x, k, restarts=50):
    """Best VAF over independent multiplicative-update runs (scikit-learn's solver)."""
    best = -np.inf
    for r in range(restarts):
        model = NMF(k, init="random", solver="mu", beta_loss="frobenius", max_iter=2000,
                    tol=1e-6, random_state=r)
        w = model.fit_transform(x)
        best = max(best, vaf(x, w, model.components_))
    return best


class TestVaf:
    def test_exact(self):
        w, h = np.array([[1.0], [2.0]]), np.array([[1.0, 3.0]])
        assert vaf(w @ h, w, h) == 1.0

    def test_zero_activations(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert vaf(x, np.ones((2, 1)), np.zeros((1, 2))) == 0.0

    def test_hand_frobenius(self):
        x = np.array([[2.0, 0.0], [0.0, 0.0]])
        assert vaf(x, np.array([[1.0], [0.0]]), np.array([[1.0, 0.0]])) == 0.75

    def test_all_zero(self):
        with pytest.raises(UndefinedRatioError):
            vaf(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((1, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            vaf(np.ones((2, 3)), np.ones((2, 1)), np.ones((1, 2)))


class TestNnmf:
    def test_exact_rank_two(self, rng):
        h = rng.uniform(size=(2, 100))
        assert nnmf_factorize(np.eye(2) @ h, 2, seed=0).vaf >= 0.999

    def test_rank_one(self, rng):
        x = np.outer(rng.uniform(0.5, 2, 6), rng.uniform(0.5, 2, 50))
        assert nnmf_factorize(x, 1, seed=0).vaf >= 0.999

    @pytest.mark.filterwarnings("ignore::sklearn.exceptions.ConvergenceWarning")
    def test_matches_independent_oracle(self, rng):
        x = rng.uniform(size=(10, 200))
        ours = nnmf_factorize(x, 3, seed=1).vaf
        assert abs(ours - oracle_vaf(x, 3)) <= 0.02

    def test_rejects_negative_and_bad_k(self):
        with pytest.raises(InvalidArgumentError):
            nnmf_factorize(np.array([[1.0, -0.1], [1.0, 1.0]]), 1)
        with pytest.raises(InvalidArgumentError):
            nnmf_factorize(np.ones((3, 5)), 4)
        with pytest.raises(InvalidArgumentError):
            nnmf_factorize(np.ones((3, 5)), 0)

    def test_tiny_negatives_clipped(self):
        x = np.ones((3, 5))
        x[0, 0] = -1e-14
        clipped = x.copy()
        clipped[0, 0] = 0.0
        res, ref = nnmf_factorize(x, 1), nnmf_factorize(clipped, 1)
        assert np.array_equal(res.w, ref.w) and res.vaf == ref.vaf

    def test_result_invariants(self, rng):
        x = rng.uniform(size=(8, 120))
        res = nnmf_factorize(x, 3, seed=2)
        assert res.w.min() >= 0 and res.h.min() >= 0
        assert np.allclose(np.linalg.norm(res.w, axis=0), 1.0, atol=1e-9)
        assert 0.0 <= res.vaf <= 1.0
        assert res.objective == pytest.approx(np.linalg.norm(x - res.w @ res.h), rel=1e-9)
        assert res.vaf == pytest.approx(vaf(x, res.w, res.h))

    def test_objective_never_increases(self, rng):
        res = nnmf_factorize(rng.uniform(size=(10, 200)), 4, seed=3, check_every=10)
        trace = res.objective_trace
        assert len(trace) >= 2
        assert np.all(np.diff(trace) <= 1e-12 * trace[0])

    def test_deterministic(self, rng):
        x = rng.uniform(size=(6, 80))
        a, b = nnmf_factorize(x, 2, seed=9), nnmf_factorize(x, 2, seed=9)
        assert np.array_equal(a.w, b.w) and np.array_equal(a.h, b.h)

    @settings(max_examples=20)
    @given(seeds, st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, c):
        x = np.random.default_rng(seed).uniform(size=(6, 60))
        assert nnmf_factorize(c * x, 2, seed=seed).vaf == pytest.approx(
            nnmf_factorize(x, 2, seed=seed).vaf, abs=1e-6)


class TestSelect:
    def test_rank_two_needs_two(self):
        h = np.vstack([np.tile([1.0, 0.0], 50), np.tile([0.0, 1.0], 50)])
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]) @ h
        # brute-force oracle: the best rank-1 approximation (non-negative by Perron-Frobenius)
        sv = np.linalg.svd(x, compute_uv=False)
        assert 1 - sv[0] ** 2 / np.sum(sv ** 2) > 0.15
        curve = select_synergy_count([x], 3, 0.85, seed=0)
        assert curve.selected_k == 2 and curve.reached
        assert [k for k, _ in curve.per_k] == [1, 2, 3]

    def test_zero_threshold(self, rng):
        assert select_synergy_count([rng.uniform(size=(5, 40))], 3, 0.0).selected_k == 1

    def test_not_reached(self, rng):
        curve = select_synergy_count([rng.uniform(size=(6, 300))], 2, 0.999)
        assert curve.selected_k == 2 and not curve.reached

    def test_minimum_across_blocks(self, rng):
        easy = np.outer(rng.uniform(1, 2, 4), rng.uniform(1, 2, 50))
        hard = rng.uniform(size=(4, 50))
        both = select_synergy_count([easy, hard], 2, 0.85, seed=0)
        alone = select_synergy_count([hard], 2, 0.85, seed=0)
        assert both.per_k[0][1] <= 1.0
        assert both.per_k[0][1] == pytest.approx(min(both.per_k[0][1], alone.per_k[0][1]), abs=0.02)

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            select_synergy_count([], 2)
        with pytest.raises(InvalidArgumentError):
            select_synergy_count([np.ones((3, 10))], 4)

    @settings(max_examples=15)
    @given(seeds, st.integers(3, 7))
    def test_curve_non_decreasing(self, seed, m):
        r = np.random.default_rng(seed)
        blocks = [r.uniform(size=(m, 80)), r.uniform(size=(m, 80)) ** 3]
        curve = select_synergy_count(blocks, m, 0.999, seed=seed, max_iter=300)
        v = [x for _, x in curve.per_k]
        assert all(b >= a - 1e-3 for a, b in zip(v, v[1:]))
