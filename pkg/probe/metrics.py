from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.stats import rankdata
from sklearn.metrics import r2_score

from data.interactions import SplitDataset
from diagnostics.metrics import recall_at_k
from diagnostics.ranking import EmbeddingScorer, evaluate, rank_users
from errors import ShapeError, UndefinedMetricError, UsageError
from models.losses import normalize_rows
from seeding import substream

RECALL_MODES = ("restricted", "mixed")


def _values(m) -> np.ndarray:
    return np.asarray(getattr(m, "values", m), dtype=np.float64)


def _same_shape(pred, target) -> Tuple[np.ndarray, np.ndarray]:
    pred, target = _values(pred), _values(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    return pred, target


def split_items(n_items: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded item partition: the first ceil(fraction * n) of a shuffle go to train."""
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"item fraction must lie strictly between 0 and 1, got {fraction}")
    order = substream(seed, "item_split").permutation(n_items)
    n_train = math.ceil(fraction * n_items - 1e-9)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def r_squared(pred, target) -> float:
    """1 - SS_res / SS_tot pooled over columns, centered on the per-column target mean."""
    pred, target = _same_shape(pred, target)
    if not np.any(target != target[:1]):
        raise UndefinedMetricError("R^2 is undefined: the target has zero variance")
    return float(r2_score(target, pred, multioutput="variance_weighted"))


def mean_cosine(pred, target) -> float:
    pred, target = _same_shape(pred, target)
    p, _ = normalize_rows(pred)
    t, _ = normalize_rows(target)
    return float(np.mean(np.sum(p * t, axis=1)))


def cosine_neighbors(x: np.ndarray, k: int, chunk_size: int = 1024) -> np.ndarray:
    """Top-k cosine neighbours of every row (self excluded), ties to the smaller id."""
    n = x.shape[0]
    if not 1 <= k < n:
        raise UsageError(f"neighbour count must lie in [1, {n - 1}], got {k}")
    unit, _ = normalize_rows(x)
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk_size):
        rows = np.arange(start, min(start + chunk_size, n))
        sims = unit[rows] @ unit.T
        sims[np.arange(rows.size), rows] = -np.inf
        out[rows] = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    return out


def geo_jaccard(pred, target, k: int = 10) -> float:
    """Mean Jaccard of each item's k nearest neighbours in the two spaces."""
    pred, target = _same_shape(pred, target)
    a = cosine_neighbors(pred, k)
    b = cosine_neighbors(target, k)
    values = [np.intersect1d(ra, rb).size / np.union1d(ra, rb).size for ra, rb in zip(a, b)]
    return float(np.mean(values))


def rank_correlation(pred, target, sample_size: int = 500, seed: int = 0) -> float:
    """
    Mean over items of the Spearman correlation between the cosine rankings
    of a fixed seeded sample of other items in the two spaces.
    """
    pred, target = _same_shape(pred, target)
    n = pred.shape[0]
    if n < 3:
        raise UndefinedMetricError("rank correlation needs at least 3 items")
    size = min(sample_size, n - 1)
    pool = substream(seed, "rank_sample").choice(n, size=min(size + 1, n), replace=False)
    p_unit, _ = normalize_rows(pred)
    t_unit, _ = normalize_rows(target)
    values = []
    for i in range(n):
        others = pool[pool != i][:size]
        rp = rankdata(p_unit[others] @ p_unit[i])
        rt = rankdata(t_unit[others] @ t_unit[i])
        rp -= rp.mean()
        rt -= rt.mean()
        denom = math.sqrt(float(rp @ rp) * float(rt @ rt))
        if denom > 0.0:
            values.append(float(rp @ rt) / denom)
    if not values:
        raise UndefinedMetricError("every neighbour ranking is constant")
    return float(np.mean(values))


def probe_list_jaccard(
    user_reps: np.ndarray,
    target_items: np.ndarray,
    projected_items: np.ndarray,
    users: np.ndarray,
    k: int,
    exclusions: Optional[sp.csr_matrix] = None,
    allowed: Optional[np.ndarray] = None,
) -> float:
    """Mean Jaccard of each user's top-K lists scored against target vs projected items."""
    projected_items, target_items = _same_shape(projected_items, target_items)
    lists_t = rank_users(EmbeddingScorer(user_reps, target_items), users, k, exclusions, allowed)
    lists_p = rank_users(EmbeddingScorer(user_reps, projected_items), users, k, exclusions, allowed)
    values = []
    for lt, lp in zip(lists_t, lists_p):
        union = np.union1d(lt, lp).size
        values.append(np.intersect1d(lt, lp).size / union if union else 1.0)
    return float(np.mean(values)) if values else float("nan")


def scored_items(target_items: np.ndarray, projected: np.ndarray, partition: np.ndarray) -> np.ndarray:
    """Target table with the partition's rows swapped for their projections."""
    table = np.array(target_items, dtype=np.float64)
    table[partition] = projected
    return table


def probe_downstream_recall(
    user_reps: np.ndarray,
    target_items: np.ndarray,
    projected: np.ndarray,
    split: SplitDataset,
    k: int,
    partition: np.ndarray,
    mode: str = "restricted",
) -> Tuple[float, float]:
    """
    Test Recall@K with the user side fixed to the collaborative users and the
    item side taken from the target table vs the projected partition items.
    Ground truth is always limited to the partition. `restricted` ranks the
    partition only; `mixed` ranks the full catalog, projecting just the partition.
    """
    if mode not in RECALL_MODES:
        raise UsageError(f"recall mode must be one of {RECALL_MODES}, got {mode!r}")
    target_items = _values(target_items)
    partition = np.asarray(partition, dtype=np.int64)
    projected_table = scored_items(target_items, _values(projected), partition)
    allowed = partition if mode == "restricted" else None
    results = [
        evaluate(EmbeddingScorer(user_reps, table), split, "test", k, allowed=allowed, truth_items=partition)
        for table in (target_items, projected_table)
    ]
    return recall_at_k(results[0]), recall_at_k(results[1])
