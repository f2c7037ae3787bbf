from __future__ import annotations

import json
import math
import os
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from errors import FormatError

STATS_FILE = "stats.json"
PROBE_CSV = "probe.csv"
PROBE_JSON = "probe.json"
ALIGN_CSV = "align.csv"
COMPLEMENTARITY_CSV = "complementarity.csv"
SWEEP_CSV = "sweep.csv"
SINGLE_VIEW_CSV = "single_view.csv"
FUSION_CSV = "fusion.csv"
STRATA_CSV = "strata.csv"
COMPOSITION_CSV = "composition.csv"
REPORT_JSON = "report.json"
MANIFEST_FILE = "artifacts.json"
DATASET_DIR = "dataset"

# Table name in the consolidated report -> file it is read from
REPORT_TABLES = {
    "stats": STATS_FILE,
    "single_view": SINGLE_VIEW_CSV,
    "complementarity": COMPLEMENTARITY_CSV,
    "fusion": FUSION_CSV,
    "strata": STRATA_CSV,
    "composition": COMPOSITION_CSV,
    "probe": PROBE_CSV,
    "align": ALIGN_CSV,
    "sweep": SWEEP_CSV,
}


def checkpoint_dir(out_dir: str, kind: str) -> str:
    return os.path.join(out_dir, f"{kind}.ckpt")


def to_jsonable(value: Any) -> Any:
    """NaN and infinities become null; numpy scalars and arrays become plain Python."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path: str, payload: Any) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(payload), f, indent=2, sort_keys=True)
    return path


def read_json(path: str) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def write_table(path: str, frame: pd.DataFrame) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.6f")
    return path


def record_artifacts(
    out_dir: str,
    files: Dict[str, str],
    command: str,
    config_hash: str,
    dataset_hash: Optional[str],
) -> str:
    """
    Register produced files in `<out>/artifacts.json` with the config and
    dataset hash that produced them.
    """
    path = os.path.join(out_dir, MANIFEST_FILE)
    manifest = read_json(path) if os.path.exists(path) else {}
    for name in sorted(files.values()):
        rel = os.path.relpath(name, out_dir)
        manifest[rel] = {"command": command, "config_hash": config_hash, "dataset_hash": dataset_hash}
    return write_json(path, manifest)
