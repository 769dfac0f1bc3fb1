import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vsematch.embedcore import CSLS, INVERTED_SOFTMAX, SimilarityMatrix
from vsematch.errors import InsufficientCandidates, NotRawSimilarity, TooFewQueries
from vsematch.inference import (
    InferenceConfig,
    csls_scores,
    greedy_assignment,
    inverted_softmax_scores,
    match_hungarian,
    rank_csls,
    rank_inverted_softmax,
    rank_naive,
)


def sim(a):
    return SimilarityMatrix(np.asarray(a, dtype=float))


def random_sim(rng, nq, ni):
    return rng.uniform(-1, 1, size=(nq, ni))


class TestNaive:
    def test_identity(self):
        r = rank_naive(sim([[1, 0], [0, 1]]))
        assert r.ranked_items.tolist() == [[0, 1], [1, 0]]

    def test_constant_matrix_uses_index_order(self):
        r = rank_naive(sim(np.full((3, 5), 0.3)))
        assert r.ranked_items.tolist() == [list(range(5))] * 3

    def test_sort_oracle(self):
        s = random_sim(np.random.default_rng(0), 20, 30)
        r = rank_naive(sim(s))
        assert r.ranked_items.tolist() == [oracles.ranking(row) for row in s.tolist()]

    def test_requires_raw(self):
        with pytest.raises(NotRawSimilarity):
            rank_naive(SimilarityMatrix(np.eye(2), CSLS, {"k": 1}))


class TestInvertedSoftmax:
    def test_equal_scores_give_one(self):
        out = inverted_softmax_scores(np.array([[0.4], [0.4]]), 30.0)
        np.testing.assert_allclose(out, [[1.0], [1.0]], rtol=1e-15)

    def test_dominant_query(self):
        s = np.array([[0.9], [0.2], [0.1], [0.3]])
        out = inverted_softmax_scores(s, 30.0)[:, 0]
        assert out[0] > 1.0
        assert np.all(out[1:] < 1.0)
        # direct evaluation: e^{27} / (e^{6} + e^{3} + e^{9})
        assert out[0] == pytest.approx(math.exp(27) / (math.exp(6) + math.exp(3) + math.exp(9)), rel=1e-12)

    def test_high_precision_oracle(self):
        s = random_sim(np.random.default_rng(1), 15, 15)
        out = inverted_softmax_scores(s, 30.0)
        ref = oracles.inverted_softmax(s.tolist(), 30.0)
        np.testing.assert_allclose(out, np.array(ref, dtype=float), rtol=1e-9)

    def test_large_beta_is_finite(self):
        s = random_sim(np.random.default_rng(2), 6, 4)
        out = inverted_softmax_scores(s, 1e3)
        assert np.all(np.isfinite(out) | (out == np.inf))
        ref = np.array(oracles.inverted_softmax(s.tolist(), 1e3, dps=80), dtype=float)
        finite = np.isfinite(ref) & (ref > 1e-300)
        np.testing.assert_allclose(out[finite], ref[finite], rtol=1e-9)

    def test_too_few_queries(self):
        with pytest.raises(TooFewQueries):
            rank_inverted_softmax(sim([[0.1, 0.2]]))

    def test_provenance(self):
        r = rank_inverted_softmax(sim(np.eye(3)), InferenceConfig(INVERTED_SOFTMAX, beta=5.0))
        assert r.adjusted.provenance == INVERTED_SOFTMAX
        assert r.adjusted.params == {"beta": 5.0}

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(1, 12))
    def test_column_order_preserved(self, seed, nq, ni):
        s = random_sim(np.random.default_rng(seed), nq, ni)
        out = inverted_softmax_scores(s, 30.0)
        for t in range(ni):
            assert np.argsort(-out[:, t], kind="stable").tolist() == np.argsort(-s[:, t], kind="stable").tolist()


class TestCsls:
    def test_constant_matrix(self):
        np.testing.assert_array_equal(csls_scores(np.full((4, 5), 0.7), 2), np.zeros((4, 5)))

    def test_full_k_is_mean_centering(self):
        s = random_sim(np.random.default_rng(3), 6, 6)
        out = csls_scores(s, 6)
        np.testing.assert_allclose(out, 2 * s - s.mean(axis=0)[None, :] - s.mean(axis=1)[:, None], atol=1e-14)

    def test_sort_oracle(self):
        s = random_sim(np.random.default_rng(4), 12, 12)
        np.testing.assert_allclose(csls_scores(s, 10), oracles.csls(s.tolist(), 10), rtol=1e-9, atol=1e-14)

    def test_rectangular_oracle(self):
        s = random_sim(np.random.default_rng(5), 7, 13)
        np.testing.assert_allclose(csls_scores(s, 4), oracles.csls(s.tolist(), 4), rtol=1e-9, atol=1e-14)

    def test_k_too_large(self):
        with pytest.raises(InsufficientCandidates):
            rank_csls(sim(np.eye(3)), InferenceConfig(CSLS, csls_k=4))

    def test_transpose_symmetry(self):
        s = random_sim(np.random.default_rng(6), 8, 11)
        a = rank_csls(sim(s), InferenceConfig(CSLS, csls_k=3)).adjusted.scores
        b = rank_csls(sim(s.T), InferenceConfig(CSLS, csls_k=3)).adjusted.scores
        np.testing.assert_allclose(b, a.T, atol=1e-15)

    def test_shift_invariance_of_differences(self):
        s = random_sim(np.random.default_rng(7), 9, 9)
        a = csls_scores(s, 3)
        b = csls_scores(s + 0.37, 3)
        np.testing.assert_allclose(b[:, 1:] - b[:, :1], a[:, 1:] - a[:, :1], atol=1e-12)

    def test_ranking_consistent_with_adjusted(self):
        s = random_sim(np.random.default_rng(8), 10, 10)
        r = rank_csls(sim(s), InferenceConfig(CSLS, csls_k=3))
        for q in range(10):
            assert r.ranked_items[q].tolist() == oracles.ranking(r.adjusted.scores[q].tolist())


class TestHungarian:
    def test_identity(self):
        m = match_hungarian(sim([[1, 0], [0, 1]]))
        assert m.edges == [(0, 0), (1, 1)]
        assert m.total_weight == 2.0

    def test_beats_greedy(self):
        m = match_hungarian(sim([[0.9, 0.85], [0.8, 0.1]]))
        assert m.edges == [(0, 1), (1, 0)]
        assert m.total_weight == pytest.approx(1.65, abs=1e-12)
        assert greedy_assignment(sim([[0.9, 0.85], [0.8, 0.1]])).total_weight == pytest.approx(1.0)

    def test_seven_by_seven_brute_force(self):
        w = random_sim(np.random.default_rng(9), 7, 7)
        best, perm = oracles.best_assignment(w.tolist())
        m = match_hungarian(sim(w))
        assert m.total_weight == best
        assert [i for _, i in m.edges] == perm

    @pytest.mark.parametrize("seed", range(20))
    def test_integer_ties_lexicographic(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        w = rng.integers(0, 3, size=(n, n)).astype(float)
        best, perm = oracles.best_assignment(w.tolist())
        m = match_hungarian(sim(w))
        assert m.total_weight == best
        assert [i for _, i in m.edges] == perm

    def test_constant_matrix_is_identity(self):
        m = match_hungarian(sim(np.ones((5, 5))))
        assert m.edges == [(i, i) for i in range(5)]

    @pytest.mark.parametrize("shape", [(3, 6), (6, 3), (1, 4), (4, 1)])
    def test_rectangular_brute_force(self, shape):
        nq, ni = shape
        w = random_sim(np.random.default_rng(nq * 10 + ni), nq, ni)
        m = match_hungarian(sim(w))
        assert len(m.edges) == min(nq, ni)
        if nq <= ni:
            best = max(math.fsum(w[q, p[q]] for q in range(nq)) for p in itertools.permutations(range(ni), nq))
        else:
            best = max(math.fsum(w[p[i], i] for i in range(ni)) for p in itertools.permutations(range(nq), ni))
        assert m.total_weight == pytest.approx(best, abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 30))
    def test_matching_invariants(self, seed, n):
        w = random_sim(np.random.default_rng(seed), n, n)
        m = match_hungarian(sim(w))
        qs = [q for q, _ in m.edges]
        its = [i for _, i in m.edges]
        assert len(set(qs)) == len(qs) == n
        assert len(set(its)) == len(its) == n
        assert m.total_weight == pytest.approx(sum(w[q, i] for q, i in m.edges), abs=1e-12)
        assert m.total_weight >= greedy_assignment(sim(w)).total_weight - 1e-12
