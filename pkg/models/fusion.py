from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from data.embeddings import EmbeddingMatrix
from data.interactions import SplitDataset
from diagnostics.ranking import EmbeddingScorer
from errors import ShapeError, UsageError
from logging_utils import log_event
from models.graph import BipartiteGraph, build_train_graph
from models.losses import info_nce_from_logits, norm, normalize_backward, normalize_rows
from models.optim import Params
from models.semantic import _frozen, user_semantic_inputs
from models.training import TrainConfig, TrainHistory, fit
from seeding import substream

SEMANTIC_PARAMS = ("weight", "bias")
BRANCHES = ("fused", "cf", "sem")


@dataclass
class BranchReps:
    """Per-row representations with the pre-normalization norms kept for backprop."""

    cf_raw: np.ndarray
    h_cf: np.ndarray
    cf_norm: np.ndarray
    sem_raw: np.ndarray
    h_sem: np.ndarray
    sem_norm: np.ndarray
    z: np.ndarray
    z_norm: np.ndarray


@dataclass
class FusionModel:
    """
    Dual-encoder fusion. The collaborative branch propagates ID embeddings
    over the train graph; the semantic branch projects frozen item vectors.
    Both are l2-normalized, concatenated and normalized again.
    """

    weight: np.ndarray
    bias: np.ndarray
    user_emb: np.ndarray
    item_emb: np.ndarray
    item_vectors: np.ndarray
    user_inputs: np.ndarray
    graph: BipartiteGraph
    train_positives: sp.csr_matrix
    n_layers: int = 2
    use_bias: bool = True
    temperature: float = 0.15
    hard_pool: int = 512
    hard_m: int = 16
    history: Optional[TrainHistory] = None
    name: str = "fusion"
    _pool_warned: bool = field(default=False, repr=False)

    @property
    def n_users(self) -> int:
        return int(self.user_emb.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.item_emb.shape[0])

    @property
    def d(self) -> int:
        return int(self.user_emb.shape[1])

    def parameters(self) -> Params:
        params = {"weight": self.weight, "user_emb": self.user_emb, "item_emb": self.item_emb}
        if self.use_bias:
            params["bias"] = self.bias
        return params

    def load_parameters(self, params: Params) -> None:
        self.weight = params["weight"]
        self.user_emb = params["user_emb"]
        self.item_emb = params["item_emb"]
        if self.use_bias:
            self.bias = params["bias"]

    def cf_final(self) -> np.ndarray:
        return self.graph.propagate_table(np.vstack([self.user_emb, self.item_emb]), self.n_layers)

    def user_reps(self, users: np.ndarray, final: Optional[np.ndarray] = None) -> BranchReps:
        final = self.cf_final() if final is None else final
        inputs = self.user_inputs[users]
        # Users without train history get no semantic half
        cold = ~np.any(inputs != 0.0, axis=1)
        sem_raw = np.where(cold[:, None], 0.0, inputs @ self.weight.T + self.bias)
        return _branch_reps(final[users], sem_raw)

    def item_reps(self, items: np.ndarray, final: Optional[np.ndarray] = None) -> BranchReps:
        final = self.cf_final() if final is None else final
        return _branch_reps(final[self.n_users + items], self.item_vectors[items] @ self.weight.T + self.bias)

    def batch_loss(self, users: np.ndarray, items: np.ndarray, rngs: Dict[str, np.random.Generator]):
        final = self.cf_final()
        pool_size = min(self.hard_pool, self.n_items)
        pool = np.sort(rngs["mining"].choice(self.n_items, size=pool_size, replace=False))
        hard, valid = _mine_batch(self, users, items, pool, final)
        return fusion_batch_loss(self, users, items, hard, valid, self.temperature, final=final)

    def scorer(self, branch: str = "fused") -> EmbeddingScorer:
        if branch not in BRANCHES:
            raise UsageError(f"branch must be one of {BRANCHES}, got {branch!r}")
        final = self.cf_final()
        u = self.user_reps(np.arange(self.n_users), final)
        i = self.item_reps(np.arange(self.n_items), final)
        if branch == "cf":
            return EmbeddingScorer(u.h_cf, i.h_cf)
        if branch == "sem":
            return EmbeddingScorer(u.h_sem, i.h_sem)
        return EmbeddingScorer(u.z, i.z)


def _branch_reps(cf_raw: np.ndarray, sem_raw: np.ndarray) -> BranchReps:
    h_cf, cf_norm = normalize_rows(cf_raw)
    h_sem, sem_norm = normalize_rows(sem_raw)
    z, z_norm = normalize_rows(np.hstack([h_cf, h_sem]))
    return BranchReps(cf_raw, h_cf, cf_norm, sem_raw, h_sem, sem_norm, z, z_norm)


def _branch_backward(reps: BranchReps, grad_z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Map dL/dz back to (dL/d cf_raw, dL/d sem_raw)."""
    d = reps.h_cf.shape[1]
    grad_concat = normalize_backward(grad_z, reps.z, reps.z_norm)
    grad_cf = normalize_backward(grad_concat[:, :d], reps.h_cf, reps.cf_norm)
    grad_sem = normalize_backward(grad_concat[:, d:], reps.h_sem, reps.sem_norm)
    return grad_cf, grad_sem


def fuse(h_cf: np.ndarray, h_sem: np.ndarray) -> np.ndarray:
    """Norm(h_cf (+) h_sem) for already-normalized halves."""
    h_cf = np.asarray(h_cf, dtype=np.float64)
    h_sem = np.asarray(h_sem, dtype=np.float64)
    if h_cf.shape != h_sem.shape:
        raise ShapeError(f"branch shapes differ: {h_cf.shape} vs {h_sem.shape}")
    return norm(np.concatenate([h_cf, h_sem]))


def fusion_score(model: FusionModel, user: int, item: int) -> float:
    final = model.cf_final()
    z_u = model.user_reps(np.array([user]), final).z[0]
    z_i = model.item_reps(np.array([item]), final).z[0]
    return float(z_u @ z_i)


def _select_top(scores: np.ndarray, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Column indices of the top-m entries per row (ties to the lower column) and their validity."""
    order = np.argsort(-scores, axis=1, kind="stable")[:, :m]
    valid = np.isfinite(np.take_along_axis(scores, order, axis=1))
    return order, valid


def mine_hard_negatives(
    model: FusionModel,
    user: int,
    pool: np.ndarray,
    m: int,
    exclusions: Iterable[int] = (),
) -> np.ndarray:
    """The m pool items the current fused model scores highest for `user`."""
    pool = np.setdiff1d(np.asarray(pool, dtype=np.int64), np.asarray(list(exclusions), dtype=np.int64))
    if pool.size < m:
        log_event("HARD_NEGATIVE_POOL_SHORT", user=user, pool=int(pool.size), m=m)
    final = model.cf_final()
    z_u = model.user_reps(np.array([user]), final).z
    z_pool = model.item_reps(pool, final).z
    order, _ = _select_top(z_u @ z_pool.T, min(m, pool.size))
    return pool[order[0]]


def _mine_batch(
    model: FusionModel,
    users: np.ndarray,
    items: np.ndarray,
    pool: np.ndarray,
    final: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Hard negatives per anchor: top-m of a sorted candidate pool minus the anchor's positives."""
    m = min(model.hard_m, pool.size)
    if m == 0:
        return np.zeros((users.size, 0), dtype=np.int64), np.zeros((users.size, 0), dtype=bool)
    z_u = model.user_reps(users, final).z
    z_pool = model.item_reps(pool, final).z
    scores = z_u @ z_pool.T
    excluded = model.train_positives[users][:, pool].toarray() > 0
    batch_keys = np.unique(users * model.n_items + items)
    excluded |= np.isin(users[:, None] * model.n_items + pool[None, :], batch_keys)
    scores[excluded] = -np.inf
    order, valid = _select_top(scores, m)
    if not valid.all() and not model._pool_warned:
        log_event("HARD_NEGATIVE_POOL_SHORT", pool=int(pool.size), m=m, short_rows=int((~valid.all(axis=1)).sum()))
        model._pool_warned = True
    return pool[order], valid


def fusion_batch_loss(
    model: FusionModel,
    users: np.ndarray,
    items: np.ndarray,
    hard: np.ndarray,
    hard_valid: np.ndarray,
    tau: float,
    final: Optional[np.ndarray] = None,
) -> Tuple[float, Params]:
    """
    InfoNCE over in-batch positives plus per-anchor mined negatives, with the
    mined set held fixed. Gradients reach the projection and the ID tables.
    """
    final = model.cf_final() if final is None else final
    nu = model.n_users
    batch = users.size
    u = model.user_reps(users, final)

    hard = np.asarray(hard, dtype=np.int64).reshape(batch, -1)
    hard_valid = np.asarray(hard_valid, dtype=bool).reshape(hard.shape)
    cand = np.unique(np.concatenate([items, hard[hard_valid]]))
    it = model.item_reps(cand, final)
    pos_idx = np.searchsorted(cand, items)
    hard_idx = np.where(hard_valid, np.searchsorted(cand, np.where(hard_valid, hard, cand[0])), 0)

    z_pos = it.z[pos_idx]
    z_hard = it.z[hard_idx]
    in_logits = u.z @ z_pos.T
    # Repeated copies of an anchor's own positive are not negatives
    duplicate = (items[None, :] == items[:, None]) & ~np.eye(batch, dtype=bool)
    in_logits[duplicate] = -np.inf
    hard_logits = np.einsum("bd,bmd->bm", u.z, z_hard)
    hard_logits[~hard_valid] = -np.inf

    logits = np.hstack([in_logits, hard_logits]) / tau
    loss, g = info_nce_from_logits(logits, np.arange(batch))
    g = g / tau
    g_in, g_hard = g[:, :batch], g[:, batch:]

    grad_zu = g_in @ z_pos + np.einsum("bm,bmd->bd", g_hard, z_hard)
    grad_zi = np.zeros_like(it.z)
    np.add.at(grad_zi, pos_idx, g_in.T @ u.z)
    np.add.at(grad_zi, hard_idx[hard_valid], (g_hard[:, :, None] * u.z[:, None, :])[hard_valid])

    grad_cf_u, grad_sem_u = _branch_backward(u, grad_zu)
    grad_cf_i, grad_sem_i = _branch_backward(it, grad_zi)

    grad_final = np.zeros_like(final)
    np.add.at(grad_final, users, grad_cf_u)
    grad_final[nu + cand] += grad_cf_i
    grad_table = model.graph.propagate_table(grad_final, model.n_layers)

    grads = {
        "weight": grad_sem_u.T @ model.user_inputs[users] + grad_sem_i.T @ model.item_vectors[cand],
        "user_emb": grad_table[:nu],
        "item_emb": grad_table[nu:],
    }
    if model.use_bias:
        grads["bias"] = grad_sem_u.sum(axis=0) + grad_sem_i.sum(axis=0)
    return loss, grads


def init_fusion_model(
    split: SplitDataset,
    item_vectors: np.ndarray,
    cfg: TrainConfig,
    graph: Optional[BipartiteGraph] = None,
) -> FusionModel:
    rng = substream(cfg.seed, "init")
    std = cfg.resolved_init_std()
    d_sem = item_vectors.shape[1]
    user_emb = rng.normal(0.0, std, size=(split.n_users, cfg.embedding_dim))
    item_emb = rng.normal(0.0, std, size=(split.n_items, cfg.embedding_dim))
    weight = rng.normal(0.0, 1.0 / np.sqrt(d_sem), size=(cfg.embedding_dim, d_sem))
    bias = np.zeros(cfg.embedding_dim)
    if cfg.freeze_semantic:
        weight = np.zeros_like(weight)
    train = split.matrix("train")
    return FusionModel(
        weight=weight,
        bias=bias,
        user_emb=user_emb,
        item_emb=item_emb,
        item_vectors=_frozen(item_vectors),
        user_inputs=_frozen(user_semantic_inputs(train, item_vectors)),
        graph=graph if graph is not None else build_train_graph(split),
        train_positives=train,
        n_layers=cfg.n_layers,
        use_bias=cfg.use_bias,
        temperature=cfg.temperature,
        hard_pool=cfg.hard_pool,
        hard_m=cfg.hard_m,
    )


def train_fusion(split: SplitDataset, item_vectors: EmbeddingMatrix, cfg: TrainConfig) -> FusionModel:
    if item_vectors.n != split.n_items:
        raise ShapeError(f"item vectors cover {item_vectors.n} items, dataset has {split.n_items}")
    model = init_fusion_model(split, np.asarray(item_vectors.values, dtype=np.float64), cfg)
    frozen = SEMANTIC_PARAMS if cfg.freeze_semantic else ()
    model.history = fit(model, split, cfg, frozen=frozen)
    return model
