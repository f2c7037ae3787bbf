from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from data.popularity import PopularityTable, Stratum
from diagnostics.ranking import RankingResult
from errors import ShapeError, UsageError
from logging_utils import log_event


def _mean(values) -> float:
    values = list(values)
    if not values:
        return float("nan")
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def _check_pair(a: RankingResult, b: RankingResult) -> None:
    if a.k != b.k:
        raise ShapeError(f"results were cut at different K ({a.k} vs {b.k})")
    if not np.array_equal(a.users, b.users):
        raise ShapeError("results cover different users")


def recall_at_k(results: RankingResult) -> float:
    return _mean(len(h) / len(t) for h, t in zip(results.hits, results.truth))


def ndcg_at_k(results: RankingResult) -> float:
    scores = []
    for lst, t in zip(results.lists, results.truth):
        gains = np.isin(lst, t)
        discounts = 1.0 / np.log2(np.arange(len(lst)) + 2.0)
        dcg = float(np.sum(discounts[gains]))
        ideal = 1.0 / np.log2(np.arange(min(len(t), results.k)) + 2.0)
        scores.append(dcg / float(np.sum(ideal)))
    return _mean(scores)


def hit_at_k(results: RankingResult) -> float:
    return _mean(1.0 if len(h) else 0.0 for h in results.hits)


def list_jaccard(a: RankingResult, b: RankingResult) -> float:
    _check_pair(a, b)
    values = []
    for la, lb in zip(a.lists, b.lists):
        union = np.union1d(la, lb).size
        values.append(np.intersect1d(la, lb).size / union if union else 1.0)
    return _mean(values)


def _pair_sizes(a: RankingResult, b: RankingResult):
    """Per user (|intersection|, |union|) of the two hit sets."""
    _check_pair(a, b)
    inter = np.array([np.intersect1d(ha, hb).size for ha, hb in zip(a.hits, b.hits)], dtype=np.int64)
    union = np.array([np.union1d(ha, hb).size for ha, hb in zip(a.hits, b.hits)], dtype=np.int64)
    return inter, union


def empty_union_users(a: RankingResult, b: RankingResult) -> int:
    _, union = _pair_sizes(a, b)
    return int(np.sum(union == 0))


def hit_jaccard(a: RankingResult, b: RankingResult) -> float:
    inter, union = _pair_sizes(a, b)
    defined = union > 0
    if not defined.any():
        log_event("METRIC_UNDEFINED", metric="hit_jaccard", reason="every hit union is empty")
        return float("nan")
    return _mean(inter[defined] / union[defined])


def comp_ratio(a: RankingResult, b: RankingResult, mode: str = "macro") -> float:
    """Share of hits unique to one model: symmetric difference over union."""
    inter, union = _pair_sizes(a, b)
    sym = union - inter
    if mode == "macro":
        defined = union > 0
        if not defined.any():
            log_event("METRIC_UNDEFINED", metric="comp_ratio", mode=mode, reason="every hit union is empty")
            return float("nan")
        return _mean(sym[defined] / union[defined])
    if mode == "micro":
        total = int(union.sum())
        if total == 0:
            log_event("METRIC_UNDEFINED", metric="comp_ratio", mode=mode, reason="every hit union is empty")
            return float("nan")
        return float(sym.sum() / total)
    raise UsageError(f"comp_ratio mode must be 'macro' or 'micro', got {mode!r}")


def union_upper_bound(a: RankingResult, b: RankingResult) -> float:
    """Recall of the union of both top-K lists: the ceiling for any fusion of them."""
    _check_pair(a, b)
    return _mean(
        np.intersect1d(t, np.union1d(la, lb)).size / len(t)
        for la, lb, t in zip(a.lists, b.lists, a.truth)
    )


@dataclass
class StratifiedRecall:
    values: Dict[str, float]
    n_users: Dict[str, int]
    n_skipped: Dict[str, int]


def stratified_recall(results: RankingResult, strata: PopularityTable) -> StratifiedRecall:
    values: Dict[str, float] = {}
    n_users: Dict[str, int] = {}
    n_skipped: Dict[str, int] = {}
    for stratum in Stratum:
        members = strata.members(stratum)
        per_user = []
        for h, t in zip(results.hits, results.truth):
            t_s = np.intersect1d(t, members)
            if t_s.size == 0:
                continue
            per_user.append(np.intersect1d(h, members).size / t_s.size)
        values[stratum.label] = _mean(per_user)
        n_users[stratum.label] = len(per_user)
        n_skipped[stratum.label] = len(results.truth) - len(per_user)
    return StratifiedRecall(values=values, n_users=n_users, n_skipped=n_skipped)


@dataclass
class HitComposition:
    a_unique: float
    b_unique: float
    common: float
    pool: int
    fused_hits: int
    fused_hits_in_pool: int

    def as_dict(self) -> Dict[str, float]:
        return {
            "a_unique": self.a_unique,
            "b_unique": self.b_unique,
            "common": self.common,
            "pool": self.pool,
            "fused_hits": self.fused_hits,
            "fused_hits_in_pool": self.fused_hits_in_pool,
        }


def hit_composition(fused: RankingResult, a: RankingResult, b: RankingResult) -> HitComposition:
    """
    Label every hit of the two branches as A-unique, B-unique or common,
    counted with user multiplicity. Also reports how many of the fused
    model's hits fall inside that pool.
    """
    _check_pair(fused, a)
    inter, union = _pair_sizes(a, b)
    a_sizes = np.array([len(h) for h in a.hits], dtype=np.int64)
    b_sizes = np.array([len(h) for h in b.hits], dtype=np.int64)
    pool = int(union.sum())
    fused_in_pool = sum(
        np.intersect1d(hf, np.union1d(ha, hb)).size for hf, ha, hb in zip(fused.hits, a.hits, b.hits)
    )
    fused_hits = sum(len(h) for h in fused.hits)
    if pool == 0:
        log_event("METRIC_UNDEFINED", metric="hit_composition", reason="no branch hits")
        nan = float("nan")
        return HitComposition(nan, nan, nan, 0, fused_hits, fused_in_pool)
    common = int(inter.sum())
    return HitComposition(
        a_unique=float((a_sizes.sum() - common) / pool),
        b_unique=float((b_sizes.sum() - common) / pool),
        common=float(common / pool),
        pool=pool,
        fused_hits=fused_hits,
        fused_hits_in_pool=int(fused_in_pool),
    )


def unique_hit_popularity(a: RankingResult, b: RankingResult, popularity: PopularityTable) -> Dict[str, float]:
    """
    Mean log(1 + train count) of hits unique to A and unique to B, and the
    relative drop of B-unique popularity against A-unique popularity.
    """
    _check_pair(a, b)
    log_pop = np.log1p(popularity.counts.astype(np.float64))
    a_only = [np.setdiff1d(ha, hb) for ha, hb in zip(a.hits, b.hits)]
    b_only = [np.setdiff1d(hb, ha) for ha, hb in zip(a.hits, b.hits)]
    a_vals = np.concatenate(a_only) if a_only else np.array([], dtype=np.int64)
    b_vals = np.concatenate(b_only) if b_only else np.array([], dtype=np.int64)
    a_mean = float(log_pop[a_vals].mean()) if a_vals.size else float("nan")
    b_mean = float(log_pop[b_vals].mean()) if b_vals.size else float("nan")
    drop = (b_mean - a_mean) / a_mean if a_vals.size and b_vals.size and a_mean != 0 else float("nan")
    return {"a_unique_log_pop": a_mean, "b_unique_log_pop": b_mean, "relative_drop": drop}
