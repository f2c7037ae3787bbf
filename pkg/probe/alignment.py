from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from data.interactions import SplitDataset
from errors import ConfigError, DegenerateLossError
from logging_utils import log_event, log_metrics
from models.losses import info_nce_from_logits, normalize_backward, normalize_rows
from models.optim import AdamState, Params, adam_step
from probe.mapping import ProbeConfig, ProbeMapping, init_mapping
from probe.metrics import split_items
from probe.runner import ProbeReport, json_row, partition_row
from seeding import substream


@dataclass
class AlignmentResult:
    g_cf: ProbeMapping
    g_sem: ProbeMapping
    losses: List[float] = field(default_factory=list)
    final_loss: float = float("nan")
    retrieval_accuracy: float = float("nan")


def _prefixed(prefix: str, params: Params) -> Params:
    return {f"{prefix}.{name}": value for name, value in params.items()}


def _unprefixed(prefix: str, params: Params) -> Params:
    cut = len(prefix) + 1
    return {name[cut:]: value for name, value in params.items() if name.startswith(prefix + ".")}


def alignment_loss(
    g_cf: ProbeMapping,
    g_sem: ProbeMapping,
    cf: np.ndarray,
    sem: np.ndarray,
    tau: float,
) -> Tuple[float, Params]:
    """
    In-batch contrastive loss: each item's collaborative projection is the
    anchor, its own semantic projection the positive, every other item in the
    batch a negative.
    """
    if tau <= 0:
        raise DegenerateLossError(f"temperature must be positive, got {tau}")
    zc_raw, cf_inputs = g_cf.forward(cf)
    zs_raw, sem_inputs = g_sem.forward(sem)
    zc, nc = normalize_rows(zc_raw)
    zs, ns = normalize_rows(zs_raw)
    loss, g = info_nce_from_logits(zc @ zs.T / tau, np.arange(cf.shape[0]))
    g = g / tau
    grad_cf, _ = g_cf.backward(normalize_backward(g @ zs, zc, nc), cf_inputs)
    grad_sem, _ = g_sem.backward(normalize_backward(g.T @ zc, zs, ns), sem_inputs)
    return loss, {**_prefixed("cf", grad_cf), **_prefixed("sem", grad_sem)}


def retrieval_accuracy(query: np.ndarray, keys: np.ndarray, chunk_size: int = 1024) -> float:
    """Fraction of rows whose most similar key (cosine, ties to the lower id) is their own row."""
    q, _ = normalize_rows(query)
    k, _ = normalize_rows(keys)
    correct = 0
    for start in range(0, q.shape[0], chunk_size):
        rows = np.arange(start, min(start + chunk_size, q.shape[0]))
        correct += int(np.sum(np.argmax(q[rows] @ k.T, axis=1) == rows))
    return correct / max(q.shape[0], 1)


def train_contrastive_alignment(
    sem: np.ndarray,
    cf: np.ndarray,
    tau: float,
    cfg: ProbeConfig,
    train_ids: Optional[np.ndarray] = None,
) -> AlignmentResult:
    """Jointly train two linear heads that map both item spaces into a shared one."""
    sem = np.asarray(getattr(sem, "values", sem), dtype=np.float64)
    cf = np.asarray(getattr(cf, "values", cf), dtype=np.float64)
    if sem.shape[0] != cf.shape[0]:
        raise ConfigError(f"semantic rows {sem.shape[0]} != collaborative rows {cf.shape[0]}")
    if tau <= 0:
        raise DegenerateLossError(f"temperature must be positive, got {tau}")
    ids = np.arange(cf.shape[0]) if train_ids is None else np.asarray(train_ids, dtype=np.int64)
    rng = substream(cfg.seed, "align")
    g_cf = init_mapping("Linear", cf.shape[1], cfg.align_dim, rng)
    g_sem = init_mapping("Linear", sem.shape[1], cfg.align_dim, rng)
    params = {**_prefixed("cf", g_cf.parameters()), **_prefixed("sem", g_sem.parameters())}
    state = AdamState()
    result = AlignmentResult(g_cf=g_cf, g_sem=g_sem)
    step = 0
    for _ in range(cfg.align_epochs):
        order = ids[rng.permutation(ids.size)]
        epoch_loss = 0.0
        for start in range(0, order.size, cfg.align_batch_size):
            batch = order[start: start + cfg.align_batch_size]
            if batch.size < 2:
                continue
            loss, grads = alignment_loss(g_cf, g_sem, cf[batch], sem[batch], tau)
            step += 1
            params, state = adam_step(params, grads, state, cfg.lr, 0.0, step)
            g_cf.load_parameters(_unprefixed("cf", params))
            g_sem.load_parameters(_unprefixed("sem", params))
            epoch_loss += loss * batch.size
        result.losses.append(epoch_loss / max(order.size, 1))

    result.final_loss = result.losses[-1] if result.losses else float("nan")
    result.retrieval_accuracy = retrieval_accuracy(g_cf(cf[ids]), g_sem(sem[ids]))
    log_event(
        "ALIGNMENT_TRAINED",
        epochs=cfg.align_epochs,
        final_loss=result.final_loss,
        retrieval_accuracy=result.retrieval_accuracy,
    )
    return result


def alignment_report(
    sem_items: np.ndarray,
    cf_items: np.ndarray,
    cf_users: np.ndarray,
    split: SplitDataset,
    cfg: ProbeConfig,
) -> Tuple[ProbeReport, AlignmentResult]:
    """
    Train the alignment heads on the probe's train items and report the
    probe metrics inside the aligned space: the collaborative head maps users
    and target items, the semantic head maps the probed items.
    """
    sem_items = np.asarray(getattr(sem_items, "values", sem_items), dtype=np.float64)
    cf_items = np.asarray(getattr(cf_items, "values", cf_items), dtype=np.float64)
    cf_users = np.asarray(getattr(cf_users, "values", cf_users), dtype=np.float64)
    train_ids, test_ids = split_items(cf_items.shape[0], cfg.item_fraction, cfg.seed)
    result = train_contrastive_alignment(sem_items, cf_items, cfg.align_temperature, cfg, train_ids)

    aligned_items = result.g_cf(cf_items)
    aligned_users = result.g_cf(cf_users)
    report = ProbeReport(
        settings={
            "recall_mode": cfg.recall_mode,
            "temperature": cfg.align_temperature,
            "align_dim": cfg.align_dim,
            "epochs": cfg.align_epochs,
            "final_loss": result.final_loss,
            "retrieval_accuracy": result.retrieval_accuracy,
            "seed": cfg.seed,
        }
    )
    for name, ids in (("train", train_ids), ("test", test_ids)):
        mapped = result.g_sem(sem_items[ids])
        row = partition_row("Align", name, mapped, aligned_items[ids], ids, aligned_users, aligned_items, split, cfg)
        report.rows.append(row)
        log_metrics(f"align:{name}", json_row(row))
    return report, result
