from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from data.interactions import SplitDataset
from data.popularity import PopularityTable
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
from diagnostics.ranking import EmbeddingScorer, RankingResult, evaluate
from errors import UsageError
from logging_utils import log_metrics
from models.losses import normalize_rows


@dataclass
class ComplementarityReport:
    k: int
    list_jaccard: float
    hit_jaccard: float
    comp_ratio_macro: float
    comp_ratio_micro: float
    uub: float
    recall_a: float
    recall_b: float
    unique_hit_share: float
    n_users: int
    n_empty_union: int

    def as_row(self) -> Dict[str, float]:
        return {
            "K": self.k,
            "ListJaccard": self.list_jaccard,
            "HitJaccard": self.hit_jaccard,
            "CompRatio(macro)": self.comp_ratio_macro,
            "CompRatio(micro)": self.comp_ratio_micro,
            "UUB": self.uub,
            "Recall(A)": self.recall_a,
            "Recall(B)": self.recall_b,
            "UniqueHitShare": self.unique_hit_share,
            "Users": self.n_users,
            "EmptyUnionUsers": self.n_empty_union,
        }


def unique_hit_share(a: RankingResult, b: RankingResult) -> float:
    """Hits found by exactly one of the two views, over all hits found (user multiplicity)."""
    return comp_ratio(a, b, mode="micro")


def complementarity(a: RankingResult, b: RankingResult) -> ComplementarityReport:
    return ComplementarityReport(
        k=a.k,
        list_jaccard=list_jaccard(a, b),
        hit_jaccard=hit_jaccard(a, b),
        comp_ratio_macro=comp_ratio(a, b, "macro"),
        comp_ratio_micro=comp_ratio(a, b, "micro"),
        uub=union_upper_bound(a, b),
        recall_a=recall_at_k(a),
        recall_b=recall_at_k(b),
        unique_hit_share=unique_hit_share(a, b),
        n_users=int(a.users.size),
        n_empty_union=empty_union_users(a, b),
    )


def complementarity_sweep(
    scorer_a: EmbeddingScorer,
    scorer_b: EmbeddingScorer,
    split: SplitDataset,
    ks: Sequence[int],
    part: str = "test",
) -> pd.DataFrame:
    """One complementarity row per cutoff. Lists are ranked once at the largest K and truncated."""
    if not ks:
        raise UsageError("at least one K is required")
    k_max = max(ks)
    full_a = evaluate(scorer_a, split, part, k_max)
    full_b = evaluate(scorer_b, split, part, k_max)
    rows = []
    for k in sorted(set(ks)):
        report = complementarity(full_a.truncate(k), full_b.truncate(k))
        rows.append(report.as_row())
        log_metrics(f"complementarity@{k}", report.as_row())
    return pd.DataFrame(rows)


def single_view_table(results: Mapping[str, RankingResult]) -> pd.DataFrame:
    rows = []
    for name, res in results.items():
        rows.append(
            {
                "Model": name,
                f"Recall@{res.k}": recall_at_k(res),
                f"Hit@{res.k}": hit_at_k(res),
                f"NDCG@{res.k}": ndcg_at_k(res),
                "Users": int(res.users.size),
                "SkippedUsers": int(res.n_skipped),
            }
        )
    return pd.DataFrame(rows)


def fusion_table(
    fused: RankingResult,
    sem: RankingResult,
    cf: RankingResult,
) -> pd.DataFrame:
    """Fused model against both single views and their union upper bound."""
    k = fused.k
    recalls = {"Semantic": recall_at_k(sem), "Collaborative": recall_at_k(cf), "Fused": recall_at_k(fused)}
    best = max(recalls["Semantic"], recalls["Collaborative"])
    uub = union_upper_bound(sem, cf)
    gain = (recalls["Fused"] - best) / best * 100.0 if best > 0 else float("nan")
    return pd.DataFrame(
        [
            {
                f"Recall@{k}(Sem)": recalls["Semantic"],
                f"NDCG@{k}(Sem)": ndcg_at_k(sem),
                f"Recall@{k}(CF)": recalls["Collaborative"],
                f"NDCG@{k}(CF)": ndcg_at_k(cf),
                f"Recall@{k}(Fused)": recalls["Fused"],
                f"NDCG@{k}(Fused)": ndcg_at_k(fused),
                f"UUB@{k}": uub,
                "GainVsBest(%)": gain,
                # Expected rather than guaranteed for a separately trained fused model
                "FusedWithinUUB": bool(recalls["Fused"] <= uub + 1e-12),
            }
        ]
    )


def strata_table(results: Mapping[str, RankingResult], popularity: PopularityTable) -> pd.DataFrame:
    rows = []
    sizes = popularity.sizes()
    for name, res in results.items():
        strat = stratified_recall(res, popularity)
        for label, value in strat.values.items():
            rows.append(
                {
                    "Model": name,
                    "Stratum": label,
                    f"Recall@{res.k}": value,
                    "Items": sizes[label],
                    "Users": strat.n_users[label],
                    "SkippedUsers": strat.n_skipped[label],
                }
            )
    return pd.DataFrame(rows)


def composition_table(
    fused: RankingResult,
    sem: RankingResult,
    cf: RankingResult,
    popularity: Optional[PopularityTable] = None,
) -> pd.DataFrame:
    comp = hit_composition(fused, sem, cf)
    row = {
        "Semantic-Unique(%)": comp.a_unique * 100.0,
        "Collab-Unique(%)": comp.b_unique * 100.0,
        "Common(%)": comp.common * 100.0,
        "Pool": comp.pool,
        "FusedHits": comp.fused_hits,
        "FusedHitsInPool": comp.fused_hits_in_pool,
    }
    if popularity is not None:
        pop = unique_hit_popularity(sem, cf, popularity)
        row["SemUniqueLogPop"] = pop["a_unique_log_pop"]
        row["CollabUniqueLogPop"] = pop["b_unique_log_pop"]
        row["SemVsCollabPopDrop"] = pop["relative_drop"]
    return pd.DataFrame([row])


def neighbors(embedding: np.ndarray, anchors: Sequence[int], n: int = 10) -> Dict[int, List[int]]:
    """Nearest items by cosine for each anchor (self excluded, ties to the lower id)."""
    values = np.asarray(getattr(embedding, "values", embedding), dtype=np.float64)
    if not 1 <= n < values.shape[0]:
        raise UsageError(f"neighbour count must lie in [1, {values.shape[0] - 1}], got {n}")
    unit, _ = normalize_rows(values)
    out: Dict[int, List[int]] = {}
    for anchor in anchors:
        sims = unit @ unit[anchor]
        sims[anchor] = -np.inf
        out[int(anchor)] = [int(i) for i in np.argsort(-sims, kind="stable")[:n]]
    return out


def uub_dominates(frame: pd.DataFrame, uub_col: str, recall_cols: Sequence[str]) -> bool:
    """The union upper bound is never below either single-view recall in any row."""
    for _, row in frame.iterrows():
        uub = row[uub_col]
        for col in recall_cols:
            value = row[col]
            if isinstance(value, float) and math.isnan(value):
                continue
            if value > uub + 1e-12:
                return False
    return True


def fused_above_uub(frame: pd.DataFrame) -> List[int]:
    """Rows whose fused recall exceeds the union upper bound of the two single views."""
    rows: List[int] = []
    for uub_col in [c for c in frame.columns if c.startswith("UUB@")]:
        fused_col = f"Recall{uub_col[len('UUB'):]}(Fused)"
        if fused_col not in frame.columns:
            continue
        for idx, (fused, uub) in enumerate(zip(frame[fused_col], frame[uub_col])):
            if not (math.isnan(fused) or math.isnan(uub)) and fused > uub + 1e-12:
                rows.append(idx)
    return sorted(set(rows))
