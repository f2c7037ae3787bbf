from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from data.interactions import SplitDataset
from errors import UndefinedMetricError
from logging_utils import log_event, log_metrics
from probe.mapping import ProbeConfig, fit_probe
from probe.metrics import (
    geo_jaccard,
    mean_cosine,
    probe_downstream_recall,
    probe_list_jaccard,
    r_squared,
    rank_correlation,
    scored_items,
    split_items,
)

PROBE_COLUMNS = ["Model", "Partition", "R2", "Cos", "GeoJac", "RankCor", "ListJac", "Recall(CF)", "Recall(Ps)"]


@dataclass
class ProbeReport:
    rows: List[Dict[str, Any]] = field(default_factory=list)
    settings: Dict[str, Any] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=PROBE_COLUMNS)

    def table(self, partition: str) -> pd.DataFrame:
        frame = self.to_frame()
        return frame[frame["Partition"] == partition].reset_index(drop=True)

    def as_dict(self) -> Dict[str, Any]:
        return {"settings": json_row(self.settings), "rows": [json_row(r) for r in self.rows]}

    def save(self, out_dir: str, stem: str = "probe") -> Dict[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, f"{stem}.csv")
        json_path = os.path.join(out_dir, f"{stem}.json")
        self.to_frame().to_csv(csv_path, index=False, float_format="%.6f")
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(self.as_dict(), f, indent=2, sort_keys=True)
        return {"csv": csv_path, "json": json_path}

    @classmethod
    def load(cls, json_path: str) -> "ProbeReport":
        with open(json_path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        rows = [{k: (float("nan") if v is None else v) for k, v in r.items()} for r in payload["rows"]]
        return cls(rows=rows, settings=payload.get("settings", {}))


def json_row(row: Dict[str, Any]) -> Dict[str, Any]:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in row.items()}


def _guarded(fn, *args, **kwargs) -> float:
    try:
        return fn(*args, **kwargs)
    except UndefinedMetricError as exc:
        log_event("METRIC_UNDEFINED", metric=fn.__name__, reason=str(exc))
        return float("nan")


def partition_row(
    label: str,
    partition_name: str,
    mapped: np.ndarray,
    target: np.ndarray,
    partition: np.ndarray,
    user_reps: np.ndarray,
    target_items: np.ndarray,
    split: SplitDataset,
    cfg: ProbeConfig,
) -> Dict[str, Any]:
    """Geometric and downstream metrics of one mapped partition against its target rows."""
    n = partition.size
    geo_k = min(cfg.geo_k, n - 1)
    users = np.flatnonzero([len(t) > 0 for t in split.positives("test")])
    allowed = partition if cfg.recall_mode == "restricted" else None
    recall_cf, recall_ps = probe_downstream_recall(
        user_reps, target_items, mapped, split, cfg.k, partition, mode=cfg.recall_mode
    )
    return {
        "Model": label,
        "Partition": partition_name,
        "R2": _guarded(r_squared, mapped, target),
        "Cos": mean_cosine(mapped, target),
        "GeoJac": geo_jaccard(mapped, target, geo_k) if geo_k >= 1 else float("nan"),
        "RankCor": _guarded(rank_correlation, mapped, target, cfg.rank_sample, cfg.seed),
        "ListJac": probe_list_jaccard(
            user_reps,
            target_items,
            scored_items(target_items, mapped, partition),
            users,
            cfg.k,
            exclusions=split.matrix("train"),
            allowed=allowed,
        ),
        "Recall(CF)": recall_cf,
        "Recall(Ps)": recall_ps,
    }


def run_probe(
    sem_items: np.ndarray,
    cf_items: np.ndarray,
    cf_users: np.ndarray,
    split: SplitDataset,
    cfg: ProbeConfig,
) -> ProbeReport:
    """
    Fit every configured architecture from the semantic item space to the
    collaborative one on a seeded item split, and score train and held-out
    items on geometry and downstream recall.
    """
    sem_items = np.asarray(getattr(sem_items, "values", sem_items), dtype=np.float64)
    cf_items = np.asarray(getattr(cf_items, "values", cf_items), dtype=np.float64)
    cf_users = np.asarray(getattr(cf_users, "values", cf_users), dtype=np.float64)
    train_ids, test_ids = split_items(cf_items.shape[0], cfg.item_fraction, cfg.seed)
    report = ProbeReport(
        settings={
            "recall_mode": cfg.recall_mode,
            "geo_k": cfg.geo_k,
            "rank_sample": cfg.rank_sample,
            "item_fraction": cfg.item_fraction,
            "k": cfg.k,
            "seed": cfg.seed,
            "solver": cfg.solver,
            "n_train_items": int(train_ids.size),
            "n_test_items": int(test_ids.size),
        }
    )
    for arch in cfg.archs:
        mapping = fit_probe(sem_items, cf_items, train_ids, arch, cfg)
        for name, ids in (("train", train_ids), ("test", test_ids)):
            mapped = mapping(sem_items[ids])
            row = partition_row(arch, name, mapped, cf_items[ids], ids, cf_users, cf_items, split, cfg)
            report.rows.append(row)
            log_metrics(f"probe:{arch}:{name}", json_row(row))
    log_event("PROBE_DONE", archs=",".join(cfg.archs), mode=cfg.recall_mode, items=cf_items.shape[0])
    return report
