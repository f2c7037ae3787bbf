import math

import numpy as np
import pytest

from data.popularity import PopularityTable, strata_from_counts
from diagnostics.metrics import (
    comp_ratio,
    empty_union_users,
    hit_at_k,
    hit_composition,
    hit_jaccard,
    list_jaccard,
    ndcg_at_k,
    recall_at_k,
    stratified_recall,
    union_upper_bound,
    unique_hit_popularity,
)
from diagnostics.ranking import RankingResult
from errors import ShapeError, UsageError


def _result(lists, truth, k):
    return RankingResult(
        users=np.arange(len(lists)),
        lists=[np.asarray(x, dtype=np.int64) for x in lists],
        truth=[np.asarray(sorted(t), dtype=np.int64) for t in truth],
        k=k,
    )


def _random_instance(rng, k):
    n_users = int(rng.integers(1, 51))
    n_items = int(rng.integers(max(k + 1, 8), 201))
    truth = [set(rng.choice(n_items, size=int(rng.integers(1, 8)), replace=False).tolist()) for _ in range(n_users)]
    # Lists are drawn near the truth so hits actually happen
    def lists():
        out = []
        for t in truth:
            pool = list(t) + rng.choice(n_items, size=3 * k, replace=True).tolist()
            seen = []
            for i in rng.permutation(pool):
                if int(i) not in seen:
                    seen.append(int(i))
            out.append(seen[:k])
        return out

    return n_items, truth, lists(), lists()


def _oracle_mean(values):
    values = list(values)
    return sum(values) / len(values) if values else float("nan")


def _oracle(truth, la, lb, k):
    ha = [set(l) & t for l, t in zip(la, truth)]
    hb = [set(l) & t for l, t in zip(lb, truth)]
    out = {
        "recall": _oracle_mean(len(h) / len(t) for h, t in zip(ha, truth)),
        "hit": _oracle_mean(float(bool(h)) for h in ha),
        "list_jaccard": _oracle_mean(
            len(set(x) & set(y)) / len(set(x) | set(y)) if set(x) | set(y) else 1.0 for x, y in zip(la, lb)
        ),
        "uub": _oracle_mean(len((set(x) | set(y)) & t) / len(t) for x, y, t in zip(la, lb, truth)),
    }
    pairs = [(len(x & y), len(x | y)) for x, y in zip(ha, hb)]
    defined = [(i, u) for i, u in pairs if u > 0]
    out["hit_jaccard"] = _oracle_mean(i / u for i, u in defined)
    out["macro"] = _oracle_mean((u - i) / u for i, u in defined)
    total = sum(u for _, u in pairs)
    out["micro"] = sum(u - i for i, u in pairs) / total if total else float("nan")
    dcg = []
    for l, t in zip(la, truth):
        gain = sum(1.0 / math.log2(r + 2) for r, i in enumerate(l) if i in t)
        ideal = sum(1.0 / math.log2(r + 2) for r in range(min(len(t), k)))
        dcg.append(gain / ideal)
    out["ndcg"] = _oracle_mean(dcg)
    return out


def _close(a, b):
    if math.isnan(b):
        return math.isnan(a)
    return abs(a - b) <= 1e-12


class TestOracleEquivalence:
    def test_random_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            k = int(rng.choice([5, 10, 20]))
            _, truth, la, lb = _random_instance(rng, k)
            a, b = _result(la, truth, k), _result(lb, truth, k)
            expected = _oracle(truth, la, lb, k)
            assert _close(recall_at_k(a), expected["recall"])
            assert _close(hit_at_k(a), expected["hit"])
            assert _close(ndcg_at_k(a), expected["ndcg"])
            assert _close(list_jaccard(a, b), expected["list_jaccard"])
            assert _close(union_upper_bound(a, b), expected["uub"])
            assert _close(hit_jaccard(a, b), expected["hit_jaccard"])
            assert _close(comp_ratio(a, b, "macro"), expected["macro"])
            assert _close(comp_ratio(a, b, "micro"), expected["micro"])

    def test_stratified_and_composition(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            k = int(rng.choice([5, 10, 20]))
            n_items, truth, la, lb = _random_instance(rng, k)
            _, _, lf, _ = _random_instance(np.random.default_rng(int(rng.integers(1 << 30))), k)
            lf = [[i for i in l if i < n_items] for l in lf[: len(truth)]]
            lf += [[] for _ in range(len(truth) - len(lf))]
            counts = rng.integers(0, 20, size=n_items)
            table = PopularityTable(counts=counts, strata=strata_from_counts(counts))
            a, b, f = _result(la, truth, k), _result(lb, truth, k), _result(lf, truth, k)

            strat = stratified_recall(a, table)
            for label, code in (("Head", 0), ("Mid", 1), ("Cold", 2)):
                members = set(np.flatnonzero(table.strata == code).tolist())
                per_user = [len(set(l) & t & members) / len(t & members) for l, t in zip(la, truth) if t & members]
                assert _close(strat.values[label], _oracle_mean(per_user))
                assert strat.n_users[label] + strat.n_skipped[label] == len(truth)

            ha = [set(l) & t for l, t in zip(la, truth)]
            hb = [set(l) & t for l, t in zip(lb, truth)]
            pool = sum(len(x | y) for x, y in zip(ha, hb))
            comp = hit_composition(f, a, b)
            assert comp.pool == pool
            assert comp.fused_hits_in_pool == sum(
                len(set(l) & t & (x | y)) for l, t, x, y in zip(lf, truth, ha, hb)
            )
            if pool:
                common = sum(len(x & y) for x, y in zip(ha, hb))
                assert _close(comp.common, common / pool)
                assert _close(comp.a_unique, sum(len(x - y) for x, y in zip(ha, hb)) / pool)
                assert comp.a_unique + comp.b_unique + comp.common == pytest.approx(1.0)


class TestIdentities:
    def test_comp_ratio_complements_hit_jaccard(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            _, truth, la, lb = _random_instance(rng, 10)
            a, b = _result(la, truth, 10), _result(lb, truth, 10)
            cr, hj = comp_ratio(a, b), hit_jaccard(a, b)
            if not math.isnan(cr):
                assert cr + hj == pytest.approx(1.0, abs=1e-12)

    def test_uub_dominates_each_view_per_user(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            _, truth, la, lb = _random_instance(rng, 5)
            for x, y, t in zip(la, lb, truth):
                union = len((set(x) | set(y)) & t)
                assert union >= len(set(x) & t) and union >= len(set(y) & t)
            a, b = _result(la, truth, 5), _result(lb, truth, 5)
            assert union_upper_bound(a, b) >= max(recall_at_k(a), recall_at_k(b))


class TestEdgeCases:
    def test_identical_lists(self):
        a = _result([[1, 2, 3]], [{1, 9}], 3)
        assert list_jaccard(a, a) == 1.0
        assert hit_jaccard(a, a) == 1.0
        assert comp_ratio(a, a) == 0.0

    def test_disjoint_hits(self):
        a = _result([[1, 5]], [{1, 2}], 2)
        b = _result([[2, 6]], [{1, 2}], 2)
        assert hit_jaccard(a, b) == 0.0
        assert comp_ratio(a, b, "macro") == 1.0
        assert union_upper_bound(a, b) == 1.0

    def test_no_hits_anywhere_is_nan(self):
        a = _result([[5], [6]], [{1}, {2}], 1)
        assert math.isnan(hit_jaccard(a, a))
        assert math.isnan(comp_ratio(a, a, "micro"))
        assert empty_union_users(a, a) == 2

    def test_macro_and_micro_differ(self):
        a = _result([[1, 2, 3, 4], [9]], [{1, 2, 3, 4}, {9}], 4)
        b = _result([[1, 2, 3, 5], [8]], [{1, 2, 3, 4}, {9}], 4)
        assert comp_ratio(a, b, "macro") == pytest.approx((1 / 4 + 1.0) / 2)
        assert comp_ratio(a, b, "micro") == pytest.approx(2 / 5)

    def test_ndcg_perfect_and_partial(self):
        assert ndcg_at_k(_result([[1, 2]], [{1, 2}], 2)) == pytest.approx(1.0)
        expected = (1 / math.log2(3)) / (1 + 1 / math.log2(3))
        assert ndcg_at_k(_result([[7, 2]], [{1, 2}], 2)) == pytest.approx(expected)

    def test_ndcg_ideal_is_capped_at_k(self):
        assert ndcg_at_k(_result([[1]], [{1, 2, 3}], 1)) == pytest.approx(1.0)

    def test_mismatched_pairs(self):
        a = _result([[1]], [{1}], 1)
        b = _result([[1, 2]], [{1}], 2)
        with pytest.raises(ShapeError):
            list_jaccard(a, b)

    def test_unknown_mode(self):
        a = _result([[1]], [{1}], 1)
        with pytest.raises(UsageError):
            comp_ratio(a, a, "weighted")

    def test_unique_hit_popularity(self):
        counts = np.array([0, 10, 100, 1])
        table = PopularityTable(counts=counts, strata=strata_from_counts(counts))
        a = _result([[2, 1]], [{1, 2, 3}], 2)
        b = _result([[3, 1]], [{1, 2, 3}], 2)
        pop = unique_hit_popularity(a, b, table)
        assert pop["a_unique_log_pop"] == pytest.approx(np.log(101.0))
        assert pop["b_unique_log_pop"] == pytest.approx(np.log(2.0))
        assert pop["relative_drop"] == pytest.approx((np.log(2.0) - np.log(101.0)) / np.log(101.0))
