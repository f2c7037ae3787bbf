from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from config import get_settings
from data.interactions import SplitDataset
from errors import NumericalError, ShapeError, UsageError
from logging_utils import log_event


class EmbeddingScorer:
    """Dot-product scorer over cached user and item representations."""

    def __init__(self, user_reps: np.ndarray, item_reps: np.ndarray) -> None:
        if user_reps.shape[1] != item_reps.shape[1]:
            raise ShapeError(
                f"user dimension {user_reps.shape[1]} does not match item dimension {item_reps.shape[1]}"
            )
        self.user_reps = user_reps
        self.item_reps = item_reps

    @property
    def n_users(self) -> int:
        return int(self.user_reps.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.item_reps.shape[0])

    def score(self, users: np.ndarray) -> np.ndarray:
        return self.user_reps[users] @ self.item_reps.T


def top_k(scores: np.ndarray, k: int, excluded: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    The k best non-excluded items, by descending score then ascending item id.
    Returns fewer than k items when fewer candidates remain.
    """
    if k < 1:
        raise UsageError(f"K must be >= 1, got {k}")
    scores = np.asarray(scores, dtype=np.float64).copy()
    if excluded is not None and len(excluded):
        scores[np.asarray(excluded, dtype=np.int64)] = -np.inf
    return _best(scores, k)


def _best(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k of one score row whose blocked entries are already -inf."""
    m = min(k, int(np.isfinite(scores).sum()))
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    if m < scores.size:
        # Every item tied with the m-th best survives so ties still break by id
        threshold = scores[np.argpartition(-scores, m - 1)[:m]].min()
        candidates = np.flatnonzero(scores >= threshold)
    else:
        candidates = np.arange(scores.size)
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:m]]


def rank_users(
    scorer,
    users: np.ndarray,
    k: int,
    exclusions: Optional[sp.csr_matrix] = None,
    allowed: Optional[np.ndarray] = None,
    threads: Optional[int] = None,
    chunk_size: Optional[int] = None,
) -> List[np.ndarray]:
    """
    Full-catalog top-k lists for `users`.

    `exclusions` is a user x item matrix of items never to recommend;
    `allowed`, when given, restricts the candidate set to those item ids.
    Chunks are scored in parallel; the output order always follows `users`.
    """
    if k < 1:
        raise UsageError(f"K must be >= 1, got {k}")
    settings = get_settings()
    threads = threads or settings.threads
    chunk_size = chunk_size or settings.eval_chunk_size
    users = np.asarray(users, dtype=np.int64)
    blocked = None
    if allowed is not None:
        blocked = np.ones(scorer.n_items, dtype=bool)
        blocked[np.asarray(allowed, dtype=np.int64)] = False

    def _rank_chunk(chunk: np.ndarray) -> List[np.ndarray]:
        scores = np.array(scorer.score(chunk), dtype=np.float64)
        if not np.all(np.isfinite(scores)):
            raise NumericalError("non-finite scores during ranking")
        if exclusions is not None:
            rows = exclusions[chunk]
            row_ids = np.repeat(np.arange(chunk.size), np.diff(rows.indptr))
            scores[row_ids, rows.indices] = -np.inf
        if blocked is not None:
            scores[:, blocked] = -np.inf
        return [_best(scores[r], k) for r in range(chunk.size)]

    chunks = [users[i: i + chunk_size] for i in range(0, users.size, chunk_size)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_rank_chunk, chunks))
    else:
        parts = [_rank_chunk(c) for c in chunks]
    return [row for part in parts for row in part]


@dataclass
class RankingResult:
    users: np.ndarray
    lists: List[np.ndarray]
    truth: List[np.ndarray]
    k: int
    n_skipped: int = 0
    _hits: Optional[List[np.ndarray]] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.users = np.asarray(self.users, dtype=np.int64)
        if not (len(self.lists) == len(self.truth) == self.users.size):
            raise ShapeError("users, lists and truth sets must align")
        if any(len(lst) > self.k for lst in self.lists):
            raise ShapeError(f"a recommendation list is longer than K={self.k}")

    @property
    def hits(self) -> List[np.ndarray]:
        if self._hits is None:
            self._hits = [np.intersect1d(lst, t) for lst, t in zip(self.lists, self.truth)]
        return self._hits

    @property
    def n_short(self) -> int:
        return sum(1 for lst in self.lists if len(lst) < self.k)

    def truncate(self, k: int) -> "RankingResult":
        """Prefix lists at a smaller cutoff; valid because lists are strictly ordered."""
        if k > self.k:
            raise UsageError(f"cannot extend K={self.k} lists to K={k}")
        return RankingResult(
            users=self.users,
            lists=[lst[:k] for lst in self.lists],
            truth=self.truth,
            k=k,
            n_skipped=self.n_skipped,
        )


def make_result(
    users: np.ndarray,
    lists: Sequence[np.ndarray],
    truth: Sequence[np.ndarray],
    k: int,
) -> RankingResult:
    """Build a result, dropping users whose ground-truth set is empty."""
    keep = [j for j, t in enumerate(truth) if len(t) > 0]
    result = RankingResult(
        users=np.asarray(users, dtype=np.int64)[keep],
        lists=[np.asarray(lists[j], dtype=np.int64) for j in keep],
        truth=[np.asarray(truth[j], dtype=np.int64) for j in keep],
        k=k,
        n_skipped=len(truth) - len(keep),
    )
    if result.n_short:
        log_event("TOPK_SHORT_LISTS", k=k, users=result.n_short)
    return result


def exclusions_for(split: SplitDataset, part: str) -> sp.csr_matrix:
    """Items already seen before `part`: train for validation, train+val for test."""
    if part == "val":
        return split.matrix("train")
    if part == "test":
        return split.matrix("train", "val")
    raise UsageError(f"cannot evaluate on split part {part!r}")
def evaluate(
    scorer,
    split: SplitDataset,
    part: str = "test",
    k: int = 20,
    users: Optional[np.ndarray] = None,
    allowed: Optional[np.ndarray] = None,
    truth_items: Optional[np.ndarray] = None,
) -> RankingResult:
    """
    Full-ranking evaluation of `scorer` on one split part. `allowed` limits
    the candidates; the ground truth is limited to `truth_items`, which
    defaults to `allowed`.
    """
    truth_all = split.positives(part)
    if users is None:
        users = np.flatnonzero([len(t) > 0 for t in truth_all])
        n_empty = split.n_users - users.size
    else:
        n_empty = 0
    truth = [truth_all[u] for u in users]
    truth_items = allowed if truth_items is None else truth_items
    if truth_items is not None:
        truth = [np.intersect1d(t, truth_items) for t in truth]
    lists = rank_users(scorer, users, k, exclusions=exclusions_for(split, part), allowed=allowed)
    result = make_result(users, lists, truth, k)
    result.n_skipped += n_empty
    return result
