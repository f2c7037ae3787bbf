import numpy as np
import pandas as pd
import pytest

from data.popularity import popularity_strata
from diagnostics.complementarity import (
    complementarity,
    complementarity_sweep,
    composition_table,
    fused_above_uub,
    fusion_table,
    neighbors,
    single_view_table,
    strata_table,
    uub_dominates,
)
from diagnostics.metrics import recall_at_k
from diagnostics.ranking import EmbeddingScorer, evaluate
from errors import UsageError


@pytest.fixture
def scorers(small_split):
    rng = np.random.default_rng(21)
    a = EmbeddingScorer(rng.normal(size=(30, 8)), rng.normal(size=(40, 8)))
    b = EmbeddingScorer(rng.normal(size=(30, 8)), rng.normal(size=(40, 8)))
    return a, b


class TestSweep:
    def test_one_row_per_cutoff(self, small_split, scorers):
        frame = complementarity_sweep(*scorers, small_split, [10, 5, 10])
        assert frame["K"].tolist() == [5, 10]

    def test_truncated_lists_match_direct_ranking(self, small_split, scorers):
        a, b = scorers
        frame = complementarity_sweep(a, b, small_split, [5, 10])
        direct = complementarity(evaluate(a, small_split, "test", 5), evaluate(b, small_split, "test", 5))
        row = frame[frame["K"] == 5].iloc[0]
        for key, value in direct.as_row().items():
            assert row[key] == pytest.approx(value, nan_ok=True)

    def test_union_bound_dominates(self, small_split, scorers):
        frame = complementarity_sweep(*scorers, small_split, [1, 3, 5, 10, 20])
        assert (frame["UUB"] >= frame[["Recall(A)", "Recall(B)"]].max(axis=1) - 1e-12).all()
        assert uub_dominates(frame, "UUB", ["Recall(A)", "Recall(B)"])

    def test_view_against_itself(self, small_split, scorers):
        a, _ = scorers
        row = complementarity_sweep(a, a, small_split, [10]).iloc[0]
        assert row["ListJaccard"] == 1.0
        assert row["CompRatio(macro)"] == 0.0
        assert row["UUB"] == row["Recall(A)"] == row["Recall(B)"]

    def test_needs_a_cutoff(self, small_split, scorers):
        with pytest.raises(UsageError):
            complementarity_sweep(*scorers, small_split, [])


class TestTables:
    def test_single_view_columns(self, small_split, scorers):
        results = {"CF": evaluate(scorers[0], small_split, k=10), "Sem": evaluate(scorers[1], small_split, k=10)}
        frame = single_view_table(results)
        assert frame["Model"].tolist() == ["CF", "Sem"]
        assert {"Recall@10", "Hit@10", "NDCG@10", "Users", "SkippedUsers"} <= set(frame.columns)
        assert frame.loc[0, "Recall@10"] == pytest.approx(recall_at_k(results["CF"]))

    def test_fusion_gain_against_best_view(self, small_split, scorers):
        a, b = scorers
        sem, cf = evaluate(a, small_split, k=10), evaluate(b, small_split, k=10)
        fused = evaluate(EmbeddingScorer(np.hstack([a.user_reps, b.user_reps]), np.hstack([a.item_reps, b.item_reps])), small_split, k=10)
        row = fusion_table(fused, sem, cf).iloc[0]
        best = max(recall_at_k(sem), recall_at_k(cf))
        if best > 0:
            assert row["GainVsBest(%)"] == pytest.approx((recall_at_k(fused) - best) / best * 100.0)
        assert row["UUB@10"] >= best - 1e-12
        assert row["FusedWithinUUB"] == (recall_at_k(fused) <= row["UUB@10"] + 1e-12)

    def test_fused_rows_above_the_union_bound(self):
        frame = pd.DataFrame({"Recall@20(Fused)": [0.2, 0.7, float("nan")], "UUB@20": [0.5, 0.6, 0.4]})
        assert fused_above_uub(frame) == [1]
        assert fused_above_uub(frame.rename(columns={"UUB@20": "UUB@10"})) == []

    def test_strata_rows(self, small_split, scorers):
        popularity = popularity_strata(small_split)
        frame = strata_table({"CF": evaluate(scorers[0], small_split, k=10)}, popularity)
        assert frame["Stratum"].tolist() == ["Head", "Mid", "Cold"]
        assert frame["Items"].sum() == small_split.n_items

    def test_composition_with_popularity(self, small_split, scorers):
        a, b = scorers
        sem, cf = evaluate(a, small_split, k=10), evaluate(b, small_split, k=10)
        frame = composition_table(sem, sem, cf, popularity_strata(small_split))
        row = frame.iloc[0]
        assert {"SemUniqueLogPop", "CollabUniqueLogPop", "SemVsCollabPopDrop"} <= set(frame.columns)
        if row["Pool"] > 0:
            shares = row["Semantic-Unique(%)"] + row["Collab-Unique(%)"] + row["Common(%)"]
            assert shares == pytest.approx(100.0)


class TestNeighbors:
    def test_matches_brute_force(self):
        x = np.random.default_rng(22).normal(size=(25, 3))
        unit = x / np.linalg.norm(x, axis=1, keepdims=True)
        got = neighbors(x, [0, 7, 24], n=4)
        for anchor, items in got.items():
            sims = unit @ unit[anchor]
            expected = [j for j in sorted(range(25), key=lambda j: (-sims[j], j)) if j != anchor][:4]
            assert items == expected

    def test_ties_go_to_lower_id(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 2.0], [0.0, 3.0]])
        assert neighbors(x, [0], n=3)[0] == [1, 2, 3]

    @pytest.mark.parametrize("n", [0, 4])
    def test_count_out_of_range(self, n):
        with pytest.raises(UsageError):
            neighbors(np.eye(4), [0], n=n)


class TestUubDominates:
    def test_detects_violation(self):
        frame = pd.DataFrame({"UUB": [0.5, 0.4], "Recall(A)": [0.3, 0.45], "Recall(B)": [0.2, 0.1]})
        assert not uub_dominates(frame, "UUB", ["Recall(A)", "Recall(B)"])

    def test_missing_values_are_ignored(self):
        frame = pd.DataFrame({"UUB": [0.5], "Recall(A)": [float("nan")], "Recall(B)": [0.5]})
        assert uub_dominates(frame, "UUB", ["Recall(A)", "Recall(B)"])
