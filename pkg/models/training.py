from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Protocol, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, validator

from data.interactions import SplitDataset
from diagnostics.metrics import recall_at_k
from diagnostics.ranking import EmbeddingScorer, evaluate
from errors import ConfigError, NumericalError
from logging_utils import log_event, log_training
from models.optim import AdamState, EarlyStopping, Params, adam_step
from seeding import substream


class TrainConfig(BaseModel):
    lr: float = 1e-3
    batch_size: int = 2048
    weight_decay: float = 1e-4
    # Evaluate on validation every this many epochs
    eval_every: int = 5
    # Evaluations without improvement before stopping
    patience: int = 5
    max_epochs: int = 500
    seed: int = 0
    temperature: float = 0.15
    n_neg: int = 256
    embedding_dim: int = 64
    n_layers: int = 2
    eval_k: int = 20
    init_std: Optional[float] = None
    use_bias: bool = True
    hard_pool: int = 512
    hard_m: int = 16
    freeze_semantic: bool = False

    @validator("lr", "temperature")
    def _strictly_positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("must be > 0")
        return value

    @validator("batch_size", "eval_every", "patience", "max_epochs", "n_neg", "embedding_dim", "eval_k", "hard_pool")
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @validator("weight_decay", "n_layers", "hard_m")
    def _non_negative(cls, value):
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @validator("init_std")
    def _init_positive(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and value <= 0:
            raise ValueError("must be > 0")
        return value

    def resolved_init_std(self) -> float:
        return self.init_std if self.init_std is not None else 0.1 / np.sqrt(self.embedding_dim)


class Trainable(Protocol):
    name: str

    def parameters(self) -> Params: ...

    def load_parameters(self, params: Params) -> None: ...

    def batch_loss(
        self, users: np.ndarray, items: np.ndarray, rngs: Dict[str, np.random.Generator]
    ) -> Tuple[float, Params]: ...

    def scorer(self) -> EmbeddingScorer: ...


@dataclass
class TrainHistory:
    evaluations: List[Tuple[int, float]] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("nan")
    stopped_epoch: int = 0

    def as_dict(self) -> Dict:
        return {
            "best_epoch": self.best_epoch,
            "best_val_metric": self.best_metric,
            "stopped_epoch": self.stopped_epoch,
            "evaluations": [list(e) for e in self.evaluations],
        }


class NegativeSampler:
    """Uniform item sampling that rejects each user's train positives."""

    def __init__(self, positives: sp.csr_matrix) -> None:
        self.n_items = positives.shape[1]
        coo = positives.tocoo()
        self._keys = np.unique(coo.row.astype(np.int64) * self.n_items + coo.col)
        self._degrees = np.diff(positives.indptr)

    def is_positive(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        keys = users * self.n_items + items
        if self._keys.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.minimum(np.searchsorted(self._keys, keys), self._keys.size - 1)
        return self._keys[pos] == keys

    def sample(self, rng: np.random.Generator, users: np.ndarray) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        if np.any(self._degrees[users] >= self.n_items):
            raise ConfigError("a user has interacted with every item; no negative can be sampled")
        negatives = rng.integers(0, self.n_items, size=users.size)
        pending = np.flatnonzero(self.is_positive(users, negatives))
        while pending.size:
            negatives[pending] = rng.integers(0, self.n_items, size=pending.size)
            pending = pending[self.is_positive(users[pending], negatives[pending])]
        return negatives


def _copy(params: Params) -> Params:
    return {name: value.copy() for name, value in params.items()}


def validation_recall(model: Trainable, split: SplitDataset, k: int) -> float:
    return recall_at_k(evaluate(model.scorer(), split, part="val", k=k))


def fit(
    model: Trainable,
    split: SplitDataset,
    cfg: TrainConfig,
    frozen: Iterable[str] = (),
) -> TrainHistory:
    """
    Shared training loop: seeded shuffled mini-batches over train
    interactions, Adam updates, validation Recall@K every `eval_every`
    epochs and early stopping. The model ends on its best checkpoint.
    """
    if split.val.size == 0:
        raise ConfigError("no validation users; early stopping needs a non-empty validation split")
    frozen = tuple(frozen)
    shuffle_rng = substream(cfg.seed, "shuffle")
    rngs = {"negatives": substream(cfg.seed, "negatives"), "mining": substream(cfg.seed, "mining")}
    users, items = split.base.users, split.base.items
    train_idx = split.train

    params = model.parameters()
    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best_params = _copy(params)
    step = 0
    started = time.time()

    for epoch in range(1, cfg.max_epochs + 1):
        order = train_idx[shuffle_rng.permutation(train_idx.size)]
        epoch_loss = 0.0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start: start + cfg.batch_size]
            loss, grads = model.batch_loss(users[batch], items[batch], rngs)
            if not np.isfinite(loss):
                raise NumericalError(f"{model.name}: loss became non-finite at epoch {epoch}")
            step += 1
            params, state = adam_step(params, grads, state, cfg.lr, cfg.weight_decay, step, frozen)
            model.load_parameters(params)
            epoch_loss += loss * batch.size
        history.losses.append(epoch_loss / max(order.size, 1))
        history.stopped_epoch = epoch

        last_epoch = epoch == cfg.max_epochs
        if epoch % cfg.eval_every == 0 or (last_epoch and not stopper.history):
            metric = validation_recall(model, split, cfg.eval_k)
            improved = stopper.update(metric)
            history.evaluations.append((epoch, metric))
            if improved:
                best_params = _copy(params)
                history.best_epoch = epoch
                history.best_metric = metric
            log_training(
                model.name,
                epoch=epoch,
                loss=history.losses[-1],
                val_recall=metric,
                improved=improved,
                best_epoch=history.best_epoch,
            )
            if stopper.should_stop:
                break

    model.load_parameters(best_params)
    log_event(
        "TRAINING_DONE",
        model=model.name,
        best_epoch=history.best_epoch,
        best_val_recall=history.best_metric,
        stopped_epoch=history.stopped_epoch,
        steps=step,
        wall_seconds=round(time.time() - started, 3),
    )
    return history
