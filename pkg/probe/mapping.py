from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, validator

from errors import ArchitectureError, ConfigError
from logging_utils import log_event
from models.optim import AdamState, Params, adam_step
from seeding import substream

# Hidden layer widths per architecture; None means no parameters at all
ARCHITECTURES: Dict[str, Optional[Tuple[int, ...]]] = {
    "Identity": None,
    "Linear": (),
    "MLP-0": (64,),
    "MLP-1": (256,),
    "MLP-2": (256, 256),
    "MLP-3": (256, 256, 256),
}
FULL_BATCH_LIMIT = 65_536


def canonical_arch(tag: str) -> str:
    """Accept 'mlp2', 'MLP-2', 'linear', ... and return the canonical tag."""
    key = tag.strip().lower().replace("-", "").replace("_", "")
    for name in ARCHITECTURES:
        if name.lower().replace("-", "") == key:
            return name
    raise ArchitectureError(f"unknown probe architecture {tag!r}; choose from {', '.join(ARCHITECTURES)}")


class ProbeConfig(BaseModel):
    archs: List[str] = ["Identity", "Linear", "MLP-0", "MLP-1", "MLP-2", "MLP-3"]
    item_fraction: float = 0.8
    lr: float = 1e-3
    max_epochs: int = 2000
    # Mini-batch size used only when the train partition exceeds FULL_BATCH_LIMIT
    batch_size: int = FULL_BATCH_LIMIT
    plateau_window: int = 50
    plateau_tol: float = 1e-6
    solver: str = "adam"
    seed: int = 0
    geo_k: int = 10
    rank_sample: int = 500
    k: int = 20
    recall_mode: str = "restricted"
    align_dim: int = 64
    align_epochs: int = 100
    align_batch_size: int = 256
    align_temperature: float = 0.15

    @validator("archs")
    def _archs(cls, value: List[str]) -> List[str]:
        try:
            return [canonical_arch(tag) for tag in value]
        except ArchitectureError as exc:
            raise ValueError(str(exc))

    @validator("item_fraction")
    def _fraction(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError("item_fraction must lie strictly between 0 and 1")
        return value

    @validator("lr", "align_temperature", "plateau_tol")
    def _strictly_positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("must be > 0")
        return value

    @validator(
        "max_epochs", "batch_size", "plateau_window", "geo_k", "rank_sample", "k",
        "align_dim", "align_epochs", "align_batch_size",
    )
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @validator("solver")
    def _solver(cls, value: str) -> str:
        if value not in ("adam", "lstsq"):
            raise ValueError("solver must be 'adam' or 'lstsq'")
        return value

    @validator("recall_mode")
    def _mode(cls, value: str) -> str:
        if value not in ("restricted", "mixed"):
            raise ValueError("recall_mode must be 'restricted' or 'mixed'")
        return value


@dataclass
class ProbeMapping:
    """
    A feed-forward map T from one embedding space to another: affine layers
    with ReLU between them. Identity has no layers.
    """

    arch: str
    weights: List[np.ndarray] = field(default_factory=list)
    biases: List[np.ndarray] = field(default_factory=list)
    activation: str = "relu"
    final_loss: float = float("nan")
    epochs: int = 0

    @property
    def hidden(self) -> Tuple[int, ...]:
        return tuple(w.shape[0] for w in self.weights[:-1])

    @property
    def n_parameters(self) -> int:
        return int(sum(w.size for w in self.weights) + sum(b.size for b in self.biases))

    def parameters(self) -> Params:
        params: Params = {}
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"w{j}"] = w
            params[f"b{j}"] = b
        return params

    def load_parameters(self, params: Params) -> None:
        self.weights = [params[f"w{j}"] for j in range(len(self.weights))]
        self.biases = [params[f"b{j}"] for j in range(len(self.biases))]

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        """Output and the input of every layer (kept for backward)."""
        h = np.asarray(x, dtype=np.float64)
        inputs = []
        last = len(self.weights) - 1
        for j, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            h = h @ w.T + b
            if j < last:
                h = np.maximum(h, 0.0)
        return h, inputs

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, grad_out: np.ndarray, inputs: List[np.ndarray]) -> Tuple[Params, np.ndarray]:
        """Parameter gradients and dL/dx, given dL/d output."""
        grads: Params = {}
        g = grad_out
        for j in range(len(self.weights) - 1, -1, -1):
            x_j = inputs[j]
            grads[f"w{j}"] = g.T @ x_j
            grads[f"b{j}"] = g.sum(axis=0)
            g = g @ self.weights[j]
            if j > 0:
                # inputs[j] is the ReLU output of layer j-1
                g = g * (x_j > 0.0)
        return grads, g


def init_mapping(arch: str, d_in: int, d_out: int, rng: np.random.Generator) -> ProbeMapping:
    arch = canonical_arch(arch)
    hidden = ARCHITECTURES[arch]
    if hidden is None:
        if d_in != d_out:
            raise ArchitectureError(f"Identity needs equal input and output widths, got {d_in} -> {d_out}")
        return ProbeMapping(arch=arch)
    widths = [d_in, *hidden, d_out]
    weights, biases = [], []
    for j in range(len(widths) - 1):
        fan_in = widths[j]
        # He scaling ahead of a ReLU, plain 1/fan_in on the output layer
        scale = math.sqrt((2.0 if j < len(widths) - 2 else 1.0) / fan_in)
        weights.append(rng.normal(0.0, scale, size=(widths[j + 1], fan_in)))
        biases.append(np.zeros(widths[j + 1]))
    return ProbeMapping(arch=arch, weights=weights, biases=biases)


def mse_loss(mapping: ProbeMapping, x: np.ndarray, y: np.ndarray) -> Tuple[float, Params]:
    """Mean over rows of ||T(x) - y||^2 and its parameter gradients."""
    pred, inputs = mapping.forward(x)
    diff = pred - y
    n = x.shape[0]
    loss = float(np.sum(diff * diff) / n)
    grads, _ = mapping.backward(2.0 * diff / n, inputs)
    return loss, grads


def _plateaued(losses: Sequence[float], window: int, tol: float) -> bool:
    if len(losses) <= window:
        return False
    before, now = losses[-window - 1], losses[-1]
    return (before - now) < tol * max(abs(before), 1e-300)


def _fit_lstsq(mapping: ProbeMapping, x: np.ndarray, y: np.ndarray) -> ProbeMapping:
    design = np.hstack([x, np.ones((x.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    mapping.weights = [coef[:-1].T.copy()]
    mapping.biases = [coef[-1].copy()]
    diff = mapping(x) - y
    mapping.final_loss = float(np.sum(diff * diff) / x.shape[0])
    return mapping


def fit_probe(
    sem: np.ndarray,
    cf: np.ndarray,
    train_ids: np.ndarray,
    arch: str,
    cfg: ProbeConfig,
) -> ProbeMapping:
    """
    Fit T: semantic -> collaborative on the train items by mean squared error.
    Adam runs full-batch up to FULL_BATCH_LIMIT rows and stops early once the
    train loss stops improving.
    """
    sem = np.asarray(getattr(sem, "values", sem), dtype=np.float64)
    cf = np.asarray(getattr(cf, "values", cf), dtype=np.float64)
    if sem.shape[0] != cf.shape[0]:
        raise ConfigError(f"semantic rows {sem.shape[0]} != collaborative rows {cf.shape[0]}")
    arch = canonical_arch(arch)
    rng = substream(cfg.seed, "probe", list(ARCHITECTURES).index(arch))
    mapping = init_mapping(arch, sem.shape[1], cf.shape[1], rng)
    x, y = sem[train_ids], cf[train_ids]
    if not mapping.weights:
        diff = x - y
        mapping.final_loss = float(np.sum(diff * diff) / max(x.shape[0], 1))
        return mapping
    # The closed-form solver covers the Linear probe; deeper ones always train with Adam
    if cfg.solver == "lstsq" and arch == "Linear":
        return _fit_lstsq(mapping, x, y)

    n = x.shape[0]
    batch = n if n <= FULL_BATCH_LIMIT else cfg.batch_size
    params = mapping.parameters()
    state = AdamState()
    losses: List[float] = []
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.arange(n) if batch >= n else rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            rows = order[start: start + batch]
            loss, grads = mse_loss(mapping, x[rows], y[rows])
            step += 1
            params, state = adam_step(params, grads, state, cfg.lr, 0.0, step)
            mapping.load_parameters(params)
            epoch_loss += loss * rows.size
        losses.append(epoch_loss / n)
        mapping.epochs = epoch
        if _plateaued(losses, cfg.plateau_window, cfg.plateau_tol):
            break
    final, _ = mse_loss(mapping, x, y)
    mapping.final_loss = final
    log_event("PROBE_FITTED", arch=arch, epochs=mapping.epochs, train_loss=final, parameters=mapping.n_parameters)
    return mapping
