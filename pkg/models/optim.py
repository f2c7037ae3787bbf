from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigError, NumericalError, ShapeError

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8

Params = Dict[str, np.ndarray]


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Params,
    grads: Params,
    state: AdamState,
    lr: float,
    weight_decay: float,
    t: int,
    frozen: Iterable[str] = (),
) -> Tuple[Params, AdamState]:
    """
    One Adam update with bias correction. Weight decay is an L2 term added to
    the gradient before the moment updates. Parameters without a gradient, or
    listed in `frozen`, are carried over unchanged.

    Returns new parameter and state dicts; the inputs are not modified.
    """
    if t < 1:
        raise ConfigError(f"Adam step counter starts at 1, got {t}")
    frozen = set(frozen)
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t
    new_params: Params = dict(params)
    new_state = AdamState(m=dict(state.m), v=dict(state.v), t=t)

    for name, p in params.items():
        if name in frozen or name not in grads:
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r} at step {t}")
        if weight_decay:
            g = g + weight_decay * p
        m = BETA1 * state.m.get(name, np.zeros_like(p)) + (1.0 - BETA1) * g
        v = BETA2 * state.v.get(name, np.zeros_like(p)) + (1.0 - BETA2) * (g * g)
        updated = p - lr * (m / bc1) / (np.sqrt(v / bc2) + EPSILON)
        if not np.all(np.isfinite(updated)):
            raise NumericalError(f"parameter {name!r} diverged at step {t}")
        new_params[name] = updated
        new_state.m[name] = m
        new_state.v[name] = v
    return new_params, new_state


class EarlyStopping:
    """
    Track a validation metric (higher is better). Stops once `patience`
    consecutive evaluations fail to strictly improve on the best value.
    """

    def __init__(self, patience: int) -> None:
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.history: List[float] = []
        self.best: float = -np.inf
        self.best_index: int = -1
        self.stale = 0

    def update(self, value: float) -> bool:
        self.history.append(float(value))
        if value > self.best:
            self.best = float(value)
            self.best_index = len(self.history) - 1
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def early_stop_point(values: Sequence[float], patience: int) -> Tuple[Optional[int], int]:
    """(index at which training stops or None, index of the best value) for a metric sequence."""
    stopper = EarlyStopping(patience)
    for index, value in enumerate(values):
        stopper.update(value)
        if stopper.should_stop:
            return index, stopper.best_index
    return None, stopper.best_index
