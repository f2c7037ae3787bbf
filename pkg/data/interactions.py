from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from errors import EmptyDatasetError, ParseError, UsageError, ValidationError
from logging_utils import log_event
from seeding import substream

# Sentinel for records that carried no timestamp; sorts after every real one.
NO_TIMESTAMP = np.iinfo(np.int64).max

PARTS = ("train", "val", "test")


@dataclass
class InteractionDataset:
    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    timestamps: Optional[np.ndarray]
    user_raw_ids: List[str]
    item_raw_ids: List[str]

    def __post_init__(self) -> None:
        self.users = np.asarray(self.users, dtype=np.int64)
        self.items = np.asarray(self.items, dtype=np.int64)
        if self.timestamps is not None:
            self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
            if self.timestamps.shape != self.users.shape:
                raise ValidationError("timestamps must align with interactions")
        if self.users.shape != self.items.shape:
            raise ValidationError("users and items must have the same length")
        if len(self.user_raw_ids) != self.n_users or len(self.item_raw_ids) != self.n_items:
            raise ValidationError("raw id tables do not match the id spaces")
        if self.users.size:
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise ValidationError("user id outside [0, n_users)")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise ValidationError("item id outside [0, n_items)")

    @property
    def n_interactions(self) -> int:
        return int(self.users.size)

    def pair_keys(self) -> np.ndarray:
        return self.users * self.n_items + self.items


def _read_fields(path: str, delimiter: str) -> pd.DataFrame:
    """Every line of the file as three string columns; short lines are padded with ''."""
    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            header=None,
            names=["user", "item", "timestamp"],
            dtype=str,
            na_filter=False,
            quoting=csv.QUOTE_NONE,
            skip_blank_lines=False,
            engine="c",
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=["user", "item", "timestamp"], dtype=str)
    except pd.errors.ParserError as exc:
        # "Expected 3 fields in line 5, saw 4"
        match = re.search(r"line (\d+), saw (\d+)", str(exc))
        if match is None:
            raise ParseError(f"unreadable interaction file ({exc})") from None
        raise ParseError(f"expected 2 or 3 fields, found {match.group(2)}", int(match.group(1))) from None
    return frame.fillna("")


def load_interactions(path: str, delimiter: str = "\t") -> InteractionDataset:
    """
    Parse a user<TAB>item[<TAB>timestamp] file.

    Ids are assigned in first-seen order. A repeated (user, item) pair keeps
    its first position and the earliest timestamp seen for it.
    """
    frame = _read_fields(path, delimiter)
    frame["line"] = np.arange(1, len(frame) + 1)
    blank = (frame["user"].str.strip() == "") & (frame["item"] == "") & (frame["timestamp"] == "")
    frame = frame[~blank]

    bad = frame[(frame["user"] == "") | (frame["item"] == "")]
    if len(bad):
        row = bad.iloc[0]
        if row["item"] == "" and row["timestamp"] == "":
            raise ParseError("expected 2 or 3 fields, found 1", int(row["line"]))
        raise ParseError("empty user or item field", int(row["line"]))

    stamped = frame["timestamp"] != ""
    valid = frame["timestamp"].str.strip().str.fullmatch(r"[+-]?\d+")
    invalid = frame[stamped & ~valid]
    if len(invalid):
        row = invalid.iloc[0]
        raise ParseError(f"timestamp {row['timestamp']!r} is not an integer", int(row["line"]))
    if frame.empty:
        raise EmptyDatasetError(f"{path} contains no interactions")

    stamps = np.full(len(frame), NO_TIMESTAMP, dtype=np.int64)
    stamps[stamped.to_numpy()] = frame.loc[stamped, "timestamp"].str.strip().astype(np.int64).to_numpy()
    user_codes, user_raw = pd.factorize(frame["user"], sort=False)
    item_codes, item_raw = pd.factorize(frame["item"], sort=False)

    # Duplicate pairs collapse onto their first line with the earliest timestamp
    pairs = pd.DataFrame({"u": user_codes, "i": item_codes, "ts": stamps})
    kept = pairs.groupby(["u", "i"], sort=False)["ts"].min().reset_index()
    any_timestamp = bool(stamped.any())

    ds = InteractionDataset(
        n_users=len(user_raw),
        n_items=len(item_raw),
        users=kept["u"].to_numpy(dtype=np.int64),
        items=kept["i"].to_numpy(dtype=np.int64),
        timestamps=kept["ts"].to_numpy(dtype=np.int64) if any_timestamp else None,
        user_raw_ids=[str(u) for u in user_raw],
        item_raw_ids=[str(i) for i in item_raw],
    )
    log_event(
        "INTERACTIONS_LOADED",
        path=path,
        lines=len(frame),
        duplicates_dropped=len(frame) - ds.n_interactions,
        n_users=ds.n_users,
        n_items=ds.n_items,
        n_interactions=ds.n_interactions,
    )
    return ds


def subset_interactions(ds: InteractionDataset, keep: np.ndarray) -> InteractionDataset:
    """
    Keep the masked interactions and re-contiguize both id spaces.
    Surviving ids keep their relative order.
    """
    users = ds.users[keep]
    items = ds.items[keep]
    kept_users = np.unique(users)
    kept_items = np.unique(items)
    return InteractionDataset(
        n_users=int(kept_users.size),
        n_items=int(kept_items.size),
        users=np.searchsorted(kept_users, users),
        items=np.searchsorted(kept_items, items),
        timestamps=None if ds.timestamps is None else ds.timestamps[keep],
        user_raw_ids=[ds.user_raw_ids[u] for u in kept_users],
        item_raw_ids=[ds.item_raw_ids[i] for i in kept_items],
    )


def kcore_filter(ds: InteractionDataset, k: int) -> InteractionDataset:
    if k < 1:
        raise UsageError(f"k-core requires k >= 1, got {k}")
    keep = np.ones(ds.n_interactions, dtype=bool)
    rounds = 0
    while True:
        user_deg = np.bincount(ds.users[keep], minlength=ds.n_users)
        item_deg = np.bincount(ds.items[keep], minlength=ds.n_items)
        weak = keep & ((user_deg[ds.users] < k) | (item_deg[ds.items] < k))
        if not weak.any():
            break
        keep &= ~weak
        rounds += 1
    if not keep.any():
        raise EmptyDatasetError(f"no interactions survive {k}-core filtering")
    filtered = subset_interactions(ds, keep)
    log_event(
        "KCORE_FILTERED",
        k=k,
        rounds=rounds,
        n_users=filtered.n_users,
        n_items=filtered.n_items,
        n_interactions=filtered.n_interactions,
    )
    return filtered


def compute_sparsity(ds: InteractionDataset) -> float:
    if ds.n_users <= 0 or ds.n_items <= 0:
        raise EmptyDatasetError("sparsity is undefined for an empty id space")
    return 1.0 - ds.n_interactions / (ds.n_users * ds.n_items)


def dataset_stats(ds: InteractionDataset) -> Dict[str, float]:
    """The per-dataset statistics row: Users, Items, Interactions, Sparsity (%)."""
    return {
        "Users": ds.n_users,
        "Items": ds.n_items,
        "Interactions": ds.n_interactions,
        "Sparsity": round(100.0 * compute_sparsity(ds), 4),
    }


@dataclass
class SplitDataset:
    base: InteractionDataset
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    n_forced: int = 0
    _cache: Dict[Tuple[str, ...], object] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in PARTS:
            setattr(self, name, np.sort(np.asarray(getattr(self, name), dtype=np.int64)))
        merged = np.concatenate([self.train, self.val, self.test])
        if merged.size != self.base.n_interactions or np.unique(merged).size != merged.size:
            raise ValidationError("train/val/test must partition the interactions")

    @property
    def n_users(self) -> int:
        return self.base.n_users

    @property
    def n_items(self) -> int:
        return self.base.n_items

    def indices(self, *parts: str) -> np.ndarray:
        for name in parts:
            if name not in PARTS:
                raise UsageError(f"unknown split part {name!r}")
        return np.sort(np.concatenate([getattr(self, name) for name in parts]))

    def matrix(self, *parts: str) -> sp.csr_matrix:
        """Binary user x item matrix of the requested parts."""
        key = ("matrix",) + tuple(sorted(parts))
        if key not in self._cache:
            idx = self.indices(*parts)
            data = np.ones(idx.size, dtype=np.float64)
            mat = sp.csr_matrix(
                (data, (self.base.users[idx], self.base.items[idx])),
                shape=(self.n_users, self.n_items),
            )
            mat.sum_duplicates()
            mat.sort_indices()
            self._cache[key] = mat
        return self._cache[key]

    def positives(self, *parts: str) -> List[np.ndarray]:
        """Sorted item ids per user for the requested parts."""
        mat = self.matrix(*parts)
        return [mat.indices[mat.indptr[u]: mat.indptr[u + 1]] for u in range(self.n_users)]


def _validate_ratios(ratios: Sequence[float]) -> Tuple[float, float, float]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise UsageError(f"split ratios must be three positive numbers, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise UsageError(f"split ratios must sum to 1, got {sum(ratios)}")
    return float(ratios[0]), float(ratios[1]), float(ratios[2])


def split_counts(n: int, ratios: Tuple[float, float, float]) -> Tuple[int, int, int]:
    """
    Per-user (train, val, test) sizes. Val and test get at least one item
    each once a user has three interactions; train takes the remainder.
    Users with fewer than three keep all but the last two draws in train,
    never less than one.
    """
    if n < 3:
        n_train = max(1, n - 2)
        return n_train, 0, n - n_train
    n_val = max(1, math.floor(n * ratios[1] + 1e-9))
    n_test = max(1, math.floor(n * ratios[2] + 1e-9))
    while n - n_val - n_test < 1:
        if n_test >= n_val and n_test > 1:
            n_test -= 1
        else:
            n_val -= 1
    return n - n_val - n_test, n_val, n_test


def split_per_user(
    ds: InteractionDataset,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitDataset:
    ratios = _validate_ratios(ratios)
    rng = substream(seed, "split")
    order = np.argsort(ds.users, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(ds.users, minlength=ds.n_users))])

    parts: Dict[str, List[np.ndarray]] = {name: [] for name in PARTS}
    n_forced = 0
    for u in range(ds.n_users):
        idx = order[bounds[u]: bounds[u + 1]]
        shuffled = idx[rng.permutation(idx.size)]
        n_train, n_val, _ = split_counts(idx.size, ratios)
        if idx.size < 3:
            n_forced += 1
        parts["train"].append(shuffled[:n_train])
        parts["val"].append(shuffled[n_train: n_train + n_val])
        parts["test"].append(shuffled[n_train + n_val:])

    if n_forced:
        log_event("SPLIT_FORCED_ASSIGNMENT", users=n_forced, reason="fewer than 3 interactions")
    empty = np.array([], dtype=np.int64)
    return SplitDataset(
        base=ds,
        train=np.concatenate(parts["train"]) if parts["train"] else empty,
        val=np.concatenate(parts["val"]) if parts["val"] else empty,
        test=np.concatenate(parts["test"]) if parts["test"] else empty,
        seed=seed,
        ratios=ratios,
        n_forced=n_forced,
    )
