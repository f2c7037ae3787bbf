from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Dict

import numpy as np

from data.interactions import SplitDataset
from errors import EmptyDatasetError

HEAD_FRACTION = 0.2
MID_FRACTION = 0.2


class Stratum(IntEnum):
    HEAD = 0
    MID = 1
    COLD = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


@dataclass
class PopularityTable:
    counts: np.ndarray
    strata: np.ndarray

    def members(self, stratum: Stratum) -> np.ndarray:
        return np.flatnonzero(self.strata == stratum)

    def sizes(self) -> Dict[str, int]:
        return {s.label: int(np.sum(self.strata == s)) for s in Stratum}


def strata_from_counts(counts: np.ndarray) -> np.ndarray:
    """
    Head = top ceil(20%) items by count, Mid = next ceil(20%) (capped by what
    is left), Cold = the rest. Ties go to the smaller item id.
    """
    counts = np.asarray(counts)
    n = counts.size
    order = np.lexsort((np.arange(n), -counts))
    n_head = math.ceil(HEAD_FRACTION * n)
    n_mid = min(math.ceil(MID_FRACTION * n), n - n_head)
    strata = np.full(n, Stratum.COLD, dtype=np.int8)
    strata[order[:n_head]] = Stratum.HEAD
    strata[order[n_head: n_head + n_mid]] = Stratum.MID
    return strata


def popularity_strata(split: SplitDataset) -> PopularityTable:
    if split.train.size == 0:
        raise EmptyDatasetError("popularity needs a non-empty train set")
    counts = np.bincount(split.base.items[split.train], minlength=split.n_items)
    return PopularityTable(counts=counts, strata=strata_from_counts(counts))
