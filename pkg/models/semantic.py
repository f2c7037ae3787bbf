from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from data.embeddings import EmbeddingMatrix
from data.interactions import SplitDataset
from diagnostics.ranking import EmbeddingScorer
from errors import ShapeError
from models.losses import info_nce_from_logits, norm, normalize_backward, normalize_rows
from models.optim import Params
from models.training import TrainConfig, TrainHistory, fit
from seeding import substream


def user_semantic_input(history: np.ndarray, item_vectors: np.ndarray) -> np.ndarray:
    """Norm(mean of the history's item vectors); an empty history gives the zero vector."""
    history = np.asarray(history, dtype=np.int64)
    if history.size == 0:
        return np.zeros(item_vectors.shape[1])
    return norm(np.mean(item_vectors[history], axis=0))


def user_semantic_inputs(train: sp.csr_matrix, item_vectors: np.ndarray) -> np.ndarray:
    """Pooled semantic input of every user, from train history only."""
    degrees = np.asarray(train.sum(axis=1)).ravel()
    scale = np.divide(1.0, degrees, out=np.zeros_like(degrees, dtype=np.float64), where=degrees > 0)
    means = sp.diags(scale) @ (train @ item_vectors)
    pooled, _ = normalize_rows(np.asarray(means))
    return pooled


def _frozen(values: np.ndarray) -> np.ndarray:
    frozen = np.array(values, dtype=np.float64)
    frozen.setflags(write=False)
    return frozen


@dataclass
class SemModel:
    """Content-only recommender: one affine projection over frozen item vectors."""

    weight: np.ndarray
    bias: np.ndarray
    item_vectors: np.ndarray
    user_inputs: np.ndarray
    use_bias: bool = True
    temperature: float = 0.15
    n_neg: int = 256
    history: Optional[TrainHistory] = None
    name: str = "sem"

    @property
    def d(self) -> int:
        return int(self.weight.shape[0])

    @property
    def d_sem(self) -> int:
        return int(self.weight.shape[1])

    @property
    def n_items(self) -> int:
        return int(self.item_vectors.shape[0])

    def parameters(self) -> Params:
        params = {"weight": self.weight}
        if self.use_bias:
            params["bias"] = self.bias
        return params

    def load_parameters(self, params: Params) -> None:
        self.weight = params["weight"]
        if self.use_bias:
            self.bias = params["bias"]

    def project(self, inputs: np.ndarray) -> np.ndarray:
        return inputs @ self.weight.T + self.bias

    def item_projection(self) -> np.ndarray:
        """W x + b per item, ahead of the unit-norm scoring step."""
        return self.project(self.item_vectors)

    def item_reps(self) -> np.ndarray:
        return normalize_rows(self.project(self.item_vectors))[0]

    def user_reps(self) -> np.ndarray:
        reps = normalize_rows(self.project(self.user_inputs))[0]
        # Users without train history score every item alike
        cold = ~np.any(self.user_inputs != 0.0, axis=1)
        reps[cold] = 0.0
        return reps

    def batch_loss(self, users: np.ndarray, items: np.ndarray, rngs: Dict[str, np.random.Generator]):
        negatives = rngs["negatives"].integers(0, self.n_items, size=self.n_neg)
        return sem_batch_loss(self, users, items, negatives, self.temperature)

    def scorer(self) -> EmbeddingScorer:
        return EmbeddingScorer(self.user_reps(), self.item_reps())


def init_sem_model(
    item_vectors: np.ndarray,
    user_inputs: np.ndarray,
    cfg: TrainConfig,
) -> SemModel:
    d_sem = item_vectors.shape[1]
    rng = substream(cfg.seed, "init")
    return SemModel(
        weight=rng.normal(0.0, 1.0 / np.sqrt(d_sem), size=(cfg.embedding_dim, d_sem)),
        bias=np.zeros(cfg.embedding_dim),
        item_vectors=_frozen(item_vectors),
        user_inputs=_frozen(user_inputs),
        use_bias=cfg.use_bias,
        temperature=cfg.temperature,
        n_neg=cfg.n_neg,
    )


def sem_batch_loss(
    model: SemModel,
    users: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    tau: float,
) -> Tuple[float, Params]:
    """
    InfoNCE of pooled-user anchors against their positive item and a shared
    set of catalog-wide negatives, all through Norm(W x + b).
    """
    e_users = model.user_inputs[users]
    x_pos = model.item_vectors[positives]
    x_neg = model.item_vectors[negatives]
    a, a_norm = normalize_rows(model.project(e_users))
    p, p_norm = normalize_rows(model.project(x_pos))
    n, n_norm = normalize_rows(model.project(x_neg))

    logits = np.hstack([np.sum(a * p, axis=1, keepdims=True), a @ n.T]) / tau
    loss, g = info_nce_from_logits(logits, np.zeros(users.size, dtype=np.int64))
    g = g / tau
    grad_a = g[:, :1] * p + g[:, 1:] @ n
    grad_p = g[:, :1] * a
    grad_n = g[:, 1:].T @ a

    ga = normalize_backward(grad_a, a, a_norm)
    gp = normalize_backward(grad_p, p, p_norm)
    gn = normalize_backward(grad_n, n, n_norm)
    grads = {"weight": ga.T @ e_users + gp.T @ x_pos + gn.T @ x_neg}
    if model.use_bias:
        grads["bias"] = ga.sum(axis=0) + gp.sum(axis=0) + gn.sum(axis=0)
    return loss, grads


def train_sem(split: SplitDataset, item_vectors: EmbeddingMatrix, cfg: TrainConfig) -> SemModel:
    if item_vectors.n != split.n_items:
        raise ShapeError(f"item vectors cover {item_vectors.n} items, dataset has {split.n_items}")
    vectors = np.asarray(item_vectors.values, dtype=np.float64)
    model = init_sem_model(vectors, user_semantic_inputs(split.matrix("train"), vectors), cfg)
    model.history = fit(model, split, cfg)
    return model
