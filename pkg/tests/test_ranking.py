import numpy as np
import pytest

from diagnostics.ranking import EmbeddingScorer, evaluate, make_result, rank_users, top_k
from errors import NumericalError, ShapeError, UsageError


class _FixedScorer:
    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=np.float64)
        self.n_items = self.scores.shape[1]

    def score(self, users):
        return self.scores[users]


class TestTopK:
    def test_ties_go_to_smaller_ids(self):
        np.testing.assert_array_equal(top_k(np.array([1.0, 3.0, 3.0, 2.0, 3.0]), 3), [1, 2, 4])

    def test_exclusions(self):
        np.testing.assert_array_equal(top_k(np.array([5.0, 4.0, 3.0]), 2, excluded=[0]), [1, 2])

    def test_short_list_when_candidates_run_out(self):
        assert top_k(np.array([1.0, 2.0]), 5, excluded=[1]).tolist() == [0]

    def test_k_must_be_positive(self):
        with pytest.raises(UsageError):
            top_k(np.ones(3), 0)

    def test_matches_full_sort(self):
        rng = np.random.default_rng(0)
        scores = rng.integers(0, 5, size=50).astype(float)
        expected = sorted(range(50), key=lambda i: (-scores[i], i))[:10]
        assert top_k(scores, 10).tolist() == expected

    def test_cutoff_inside_a_tie_block(self):
        scores = np.array([0.0, 2.0, 1.0, 1.0, 1.0, 1.0, 3.0, 1.0])
        assert top_k(scores, 4).tolist() == [6, 1, 2, 3]

    def test_partial_selection_matches_full_sort_with_exclusions(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            scores = rng.integers(0, 20, size=300).astype(float)
            excluded = rng.choice(300, size=40, replace=False)
            k = int(rng.integers(1, 60))
            blocked = set(excluded.tolist())
            expected = sorted((i for i in range(300) if i not in blocked), key=lambda i: (-scores[i], i))[:k]
            assert top_k(scores, k, excluded=excluded).tolist() == expected


class TestRankUsers:
    def test_chunks_and_threads_agree(self, small_split):
        rng = np.random.default_rng(1)
        scorer = EmbeddingScorer(rng.normal(size=(30, 4)), rng.normal(size=(40, 4)))
        users = np.arange(30)
        exclusions = small_split.matrix("train")
        serial = rank_users(scorer, users, 7, exclusions=exclusions, threads=1, chunk_size=30)
        parallel = rank_users(scorer, users, 7, exclusions=exclusions, threads=4, chunk_size=4)
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a, b)
        train = exclusions.toarray() > 0
        for u, lst in zip(users, serial):
            assert not np.any(train[u, lst])
            scores = scorer.score(np.array([u]))[0]
            scores[train[u]] = -np.inf
            assert lst.tolist() == top_k(scores, 7).tolist()

    def test_allowed_restricts_candidates(self):
        scorer = _FixedScorer([[9.0, 8.0, 7.0, 6.0]])
        assert rank_users(scorer, np.array([0]), 3, allowed=np.array([1, 3]))[0].tolist() == [1, 3]

    def test_non_finite_scores(self):
        with pytest.raises(NumericalError):
            rank_users(_FixedScorer([[np.nan, 1.0]]), np.array([0]), 1)

    def test_scorer_dimensions(self):
        with pytest.raises(ShapeError):
            EmbeddingScorer(np.ones((2, 3)), np.ones((2, 4)))


class TestEvaluate:
    def test_users_without_truth_are_skipped(self):
        result = make_result(np.array([0, 1]), [np.array([1]), np.array([2])], [np.array([1]), np.array([])], 1)
        assert result.users.tolist() == [0]
        assert result.n_skipped == 1

    def test_test_part_excludes_train_and_val(self, small_split):
        rng = np.random.default_rng(2)
        scorer = EmbeddingScorer(rng.normal(size=(30, 4)), rng.normal(size=(40, 4)))
        result = evaluate(scorer, small_split, "test", 10)
        seen = small_split.matrix("train", "val").toarray() > 0
        for u, lst, t in zip(result.users, result.lists, result.truth):
            assert not np.any(seen[u, lst])
            assert set(t) == set(small_split.positives("test")[u])

    def test_truth_limited_to_allowed_items(self, small_split):
        rng = np.random.default_rng(3)
        scorer = EmbeddingScorer(rng.normal(size=(30, 4)), rng.normal(size=(40, 4)))
        allowed = np.arange(0, 40, 2)
        result = evaluate(scorer, small_split, "test", 5, allowed=allowed)
        for lst, t in zip(result.lists, result.truth):
            assert set(lst) <= set(allowed)
            assert set(t) <= set(allowed)

    def test_truncate(self, small_split):
        rng = np.random.default_rng(4)
        scorer = EmbeddingScorer(rng.normal(size=(30, 4)), rng.normal(size=(40, 4)))
        full = evaluate(scorer, small_split, "test", 10)
        small = evaluate(scorer, small_split, "test", 3)
        for a, b in zip(full.truncate(3).lists, small.lists):
            np.testing.assert_array_equal(a, b)
        with pytest.raises(UsageError):
            small.truncate(10)

    def test_unknown_part(self, small_split):
        scorer = EmbeddingScorer(np.ones((30, 2)), np.ones((40, 2)))
        with pytest.raises(UsageError):
            evaluate(scorer, small_split, "train", 5)
