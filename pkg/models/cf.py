from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from data.embeddings import EmbeddingMatrix
from data.interactions import SplitDataset
from diagnostics.ranking import EmbeddingScorer
from errors import ShapeError
from models.graph import BipartiteGraph, build_train_graph
from models.losses import bpr_loss
from models.optim import Params
from models.training import NegativeSampler, TrainConfig, TrainHistory, fit
from seeding import substream


@dataclass
class CfModel:
    """LightGCN-style collaborative model: ID embeddings smoothed over the train graph."""

    user_emb: np.ndarray
    item_emb: np.ndarray
    n_layers: int = 2
    graph: Optional[BipartiteGraph] = None
    sampler: Optional[NegativeSampler] = field(default=None, repr=False)
    history: Optional[TrainHistory] = None
    name: str = "cf"

    @property
    def d(self) -> int:
        return int(self.user_emb.shape[1])

    @property
    def n_users(self) -> int:
        return int(self.user_emb.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.item_emb.shape[0])

    def parameters(self) -> Params:
        return {"user_emb": self.user_emb, "item_emb": self.item_emb}

    def load_parameters(self, params: Params) -> None:
        self.user_emb = params["user_emb"]
        self.item_emb = params["item_emb"]

    def propagated(self) -> Tuple[np.ndarray, np.ndarray]:
        users, items = propagate(self, self.graph)
        return users.values, items.values

    def batch_loss(self, users: np.ndarray, items: np.ndarray, rngs: Dict[str, np.random.Generator]):
        negatives = self.sampler.sample(rngs["negatives"], users)
        return bpr_batch_loss(self, self.graph, users, items, negatives)

    def scorer(self) -> EmbeddingScorer:
        users, items = self.propagated()
        return EmbeddingScorer(users, items)


def init_cf_model(n_users: int, n_items: int, cfg: TrainConfig, stream: str = "init") -> CfModel:
    rng = substream(cfg.seed, stream)
    std = cfg.resolved_init_std()
    return CfModel(
        user_emb=rng.normal(0.0, std, size=(n_users, cfg.embedding_dim)),
        item_emb=rng.normal(0.0, std, size=(n_items, cfg.embedding_dim)),
        n_layers=cfg.n_layers,
    )


def propagate(model: CfModel, graph: BipartiteGraph) -> Tuple[EmbeddingMatrix, EmbeddingMatrix]:
    """Layer-averaged user and item embeddings after `model.n_layers` rounds of propagation."""
    if graph is None or graph.n_users != model.n_users or graph.n_items != model.n_items:
        raise ShapeError("graph id spaces do not match the model")
    if model.item_emb.shape[1] != model.user_emb.shape[1]:
        raise ShapeError("user and item embeddings differ in dimension")
    final = graph.propagate_table(np.vstack([model.user_emb, model.item_emb]), model.n_layers)
    return (
        EmbeddingMatrix(final[: model.n_users], id_space="users"),
        EmbeddingMatrix(final[model.n_users:], id_space="items"),
    )


def bpr_batch_loss(
    model: CfModel,
    graph: BipartiteGraph,
    users: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
) -> Tuple[float, Params]:
    """Mean BPR loss of a batch of (user, positive, negative) triples and its gradients."""
    nu = model.n_users
    final = graph.propagate_table(np.vstack([model.user_emb, model.item_emb]), model.n_layers)
    u = final[users]
    p = final[nu + positives]
    n = final[nu + negatives]
    loss, g_pos, g_neg = bpr_loss(np.sum(u * p, axis=1), np.sum(u * n, axis=1))
    batch = users.size
    g_pos = g_pos[:, None] / batch
    g_neg = g_neg[:, None] / batch

    grad_final = np.zeros_like(final)
    np.add.at(grad_final, users, g_pos * p + g_neg * n)
    np.add.at(grad_final, nu + positives, g_pos * u)
    np.add.at(grad_final, nu + negatives, g_neg * u)
    grad_table = graph.propagate_table(grad_final, model.n_layers)
    return float(np.mean(loss)), {"user_emb": grad_table[:nu], "item_emb": grad_table[nu:]}


def train_cf(split: SplitDataset, cfg: TrainConfig, n_layers: Optional[int] = None) -> CfModel:
    layers = cfg.n_layers if n_layers is None else n_layers
    cfg = cfg.copy(update={"n_layers": layers})
    model = init_cf_model(split.n_users, split.n_items, cfg)
    model.graph = build_train_graph(split)
    model.sampler = NegativeSampler(split.matrix("train"))
    model.history = fit(model, split, cfg)
    return model
