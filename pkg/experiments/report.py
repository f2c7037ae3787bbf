from __future__ import annotations

import argparse
import os
from typing import Any, Dict, List, Optional

import pandas as pd

from diagnostics.complementarity import fused_above_uub, uub_dominates
from errors import ValidationError
from experiments import artifacts
from logging_utils import log_event, log_metrics

PLOT_CSV = "sweep_plot.csv"
PLOT_COLUMNS = ["K", "CompRatio(macro)", "CompRatio(micro)", "ListJaccard", "HitJaccard"]


def _find(run_dir: str, file_name: str) -> List[str]:
    """Every copy of `file_name` under the run directory, in sorted path order."""
    found = []
    for root, dirs, files in os.walk(run_dir):
        dirs.sort()
        if file_name in files:
            found.append(os.path.join(root, file_name))
    return sorted(found)


def _dataset_hashes(run_dir: str) -> Dict[str, List[str]]:
    hashes: Dict[str, List[str]] = {}
    for path in _find(run_dir, artifacts.MANIFEST_FILE):
        for name, entry in artifacts.read_json(path).items():
            digest = entry.get("dataset_hash")
            if digest:
                rel = os.path.relpath(os.path.join(os.path.dirname(path), name), run_dir)
                hashes.setdefault(digest, []).append(rel)
    return hashes


def _read_table(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ValidationError(f"{path}: unreadable table ({exc})") from exc


def _recall_columns(frame: pd.DataFrame, uub_col: str) -> List[str]:
    k = uub_col[len("UUB"):]
    if uub_col == "UUB":
        return [c for c in ("Recall(A)", "Recall(B)") if c in frame.columns]
    return [c for c in (f"Recall{k}(Sem)", f"Recall{k}(CF)") if c in frame.columns]


def _check_dominance(name: str, frame: pd.DataFrame) -> None:
    for uub_col in [c for c in frame.columns if c.startswith("UUB")]:
        recall_cols = _recall_columns(frame, uub_col)
        if recall_cols and not uub_dominates(frame, uub_col, recall_cols):
            raise ValidationError(f"{name}: {uub_col} falls below a single-view recall column")
    above = fused_above_uub(frame)
    if above:
        log_event("FUSED_ABOVE_UUB", table=name, rows=",".join(str(r) for r in above))


def _records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    return artifacts.to_jsonable(frame.astype(object).where(frame.notna(), None).to_dict(orient="records"))


def build_report(run_dir: str) -> Optional[Dict[str, Any]]:
    """
    Gather every known table under `run_dir`. Returns None when the
    directory holds nothing to report.
    """
    hashes = _dataset_hashes(run_dir)
    if len(hashes) > 1:
        detail = "; ".join(f"{digest[:12]}: {', '.join(sorted(files)[:3])}" for digest, files in sorted(hashes.items()))
        raise ValidationError(f"{run_dir}: artifacts come from different datasets ({detail})")

    tables: Dict[str, Any] = {}
    for name, file_name in artifacts.REPORT_TABLES.items():
        paths = _find(run_dir, file_name)
        if not paths:
            continue
        if file_name.endswith(".json"):
            tables[name] = {os.path.relpath(p, run_dir): artifacts.read_json(p) for p in paths}
            continue
        frames = []
        for path in paths:
            frame = _read_table(path)
            _check_dominance(os.path.relpath(path, run_dir), frame)
            if len(paths) > 1:
                frame.insert(0, "Source", os.path.relpath(os.path.dirname(path), run_dir) or ".")
            frames.append(frame)
        tables[name] = pd.concat(frames, ignore_index=True)

    if not tables:
        return None
    return {
        "run_dir": os.path.abspath(run_dir),
        "dataset_hash": next(iter(hashes), None),
        "tables": tables,
    }


def cmd_report(args: argparse.Namespace) -> Dict[str, Any]:
    run_dir = args.run_dir
    log_event("COMMAND_START", command="report", run_dir=run_dir)
    if not os.path.isdir(run_dir):
        raise ValidationError(f"{run_dir}: not a directory")

    report = build_report(run_dir)
    if report is None:
        print(f"nothing to report: no known artifacts under {run_dir}")
        log_event("REPORT_EMPTY", run_dir=run_dir)
        return {"tables": []}

    tables = report["tables"]
    files: Dict[str, str] = {}
    sweep = tables.get("sweep")
    if isinstance(sweep, pd.DataFrame):
        cols = [c for c in ["Source"] + PLOT_COLUMNS if c in sweep.columns]
        files["plot"] = artifacts.write_table(os.path.join(run_dir, PLOT_CSV), sweep[cols])

    payload = {
        "run_dir": report["run_dir"],
        "dataset_hash": report["dataset_hash"],
        "tables": {
            name: _records(value) if isinstance(value, pd.DataFrame) else value for name, value in tables.items()
        },
    }
    files["report"] = artifacts.write_json(os.path.join(run_dir, artifacts.REPORT_JSON), payload)
    log_metrics("report", {"tables": sorted(tables), "dataset_hash": report["dataset_hash"]})
    log_event("COMMAND_DONE", command="report", tables=",".join(sorted(tables)))
    return {"tables": sorted(tables), **files}
