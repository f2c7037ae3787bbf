from __future__ import annotations

import json
import os
from datetime import datetime
from typing import Any, Dict

LOG_FILE_NAME = "workbench.log"
TRAIN_LOG_FILE_NAME = "training.log"
EVAL_LOG_FILE_NAME = "evaluation.log"

_improved_eval_count = 0
_stale_eval_count = 0


def _log_dir() -> str:
    try:
        from config import get_settings

        return get_settings().log_dir
    except Exception:
        return "logs"


def _append(file_name: str, lines: list) -> None:
    log_dir = _log_dir()
    os.makedirs(log_dir, exist_ok=True)
    record = "\n".join(lines) + "\n"
    with open(os.path.join(log_dir, file_name), "a", encoding="utf-8") as f:
        f.write(record)


def _timestamp() -> str:
    return datetime.utcnow().isoformat() + "Z"


def log_event(event_type: str, **details: Any) -> None:
    """
    Append a structured event to the workbench log file.
    Format:
    Event type: <TYPE>
    (<ISO-UTC timestamp>)
    key: value
    ...
    -----
    """
    try:
        lines = [f"Event type: {event_type}", f"({_timestamp()})"]
        for key, value in details.items():
            lines.append(f"{key}: {value}")
        lines.append("-----")
        _append(LOG_FILE_NAME, lines)
    except Exception:
        # Logging failures must never break a run.
        return


def log_training(model: str, **details: Any) -> None:
    """
    Append one validation checkpoint of a trainer to the training log.
    Format:
    Model: <model>
    Totals - improved: <n>, stale: <n>
    Timestamp: <ISO-UTC>
    key: value
    ...
    -----
    The running totals count evaluations that improved the best
    validation metric versus those that did not, across the process.
    """
    try:
        global _improved_eval_count, _stale_eval_count

        if details.get("improved"):
            _improved_eval_count += 1
        else:
            _stale_eval_count += 1
        lines = [
            f"Model: {model}",
            f"Totals - improved: {_improved_eval_count}, stale: {_stale_eval_count}",
            f"Timestamp: {_timestamp()}",
        ]
        for key, value in details.items():
            lines.append(f"{key}: {value}")
        lines.append("-----")
        _append(TRAIN_LOG_FILE_NAME, lines)
    except Exception:
        return


def log_metrics(source: str, metrics: Dict[str, Any]) -> None:
    """
    Append a metric table to the evaluation log.
    Format:
    Source: <source>
    Timestamp: <ISO-UTC>
    Metrics:
    <JSON-serialized metrics>
    -----
    """
    try:
        lines = [
            f"Source: {source}",
            f"Timestamp: {_timestamp()}",
            "Metrics:",
            json.dumps(metrics, ensure_ascii=False, default=str),
            "-----",
        ]
        _append(EVAL_LOG_FILE_NAME, lines)
    except Exception:
        return
