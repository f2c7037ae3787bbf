from __future__ import annotations

from typing import Dict, Tuple

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from errors import DegenerateLossError, ShapeError


def norm(v: np.ndarray) -> np.ndarray:
    """l2-normalize a vector; the zero vector maps to itself."""
    v = np.asarray(v, dtype=np.float64)
    length = np.linalg.norm(v)
    if length == 0.0:
        return np.zeros_like(v)
    return v / length


def normalize_rows(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise l2 normalization. Returns (normalized rows, original norms); zero rows stay zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1)
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe[..., None], norms


def normalize_backward(grad_y: np.ndarray, y: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Gradient through y = x / |x| given dL/dy, y and |x|. Zero rows get zero gradient."""
    radial = np.sum(y * grad_y, axis=-1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)[..., None]
    grad_x = (grad_y - y * radial) / safe
    return np.where((norms > 0.0)[..., None], grad_x, 0.0)


def bpr_loss(score_pos, score_neg):
    """
    -ln sigmoid(pos - neg), elementwise.
    Returns (loss, dloss/dpos, dloss/dneg).
    """
    delta = np.asarray(score_pos, dtype=np.float64) - np.asarray(score_neg, dtype=np.float64)
    loss = -log_expit(delta)
    # 1 - sigmoid(delta) == sigmoid(-delta), stable for large |delta|
    slack = expit(-delta)
    return loss, -slack, slack


def info_nce_from_logits(logits: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Mean softmax cross-entropy of rows of `logits` against the column in `target`.
    Masked entries may be -inf. Returns (loss, dloss/dlogits).
    """
    logits = np.asarray(logits, dtype=np.float64)
    rows = np.arange(logits.shape[0])
    lse = logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[rows, target]))
    probs = np.exp(logits - lse[:, None])
    probs[rows, target] -= 1.0
    return loss, probs / logits.shape[0]


def infonce_loss(
    anchor: np.ndarray,
    positive: np.ndarray,
    negatives: np.ndarray,
    tau: float,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Cosine InfoNCE of one anchor against one positive and a set of negatives.
    Returns the loss and its gradients w.r.t. the raw (unnormalized) inputs.
    """
    if tau <= 0:
        raise DegenerateLossError(f"temperature must be positive, got {tau}")
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if negatives.size == 0:
        raise DegenerateLossError("InfoNCE needs at least one negative")
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    if anchor.shape != positive.shape or negatives.shape[1] != anchor.shape[0]:
        raise ShapeError("anchor, positive and negatives must share one dimension")

    a, a_norm = normalize_rows(anchor)
    p, p_norm = normalize_rows(positive)
    n, n_norm = normalize_rows(negatives)
    logits = np.concatenate([[a @ p], n @ a]) / tau
    lse = logsumexp(logits)
    loss = float(lse - logits[0])

    probs = np.exp(logits - lse)
    g = probs.copy()
    g[0] -= 1.0
    g /= tau
    grad_a = g[0] * p + g[1:] @ n
    grad_p = g[0] * a
    grad_n = g[1:, None] * a[None, :]
    return loss, {
        "anchor": normalize_backward(grad_a, a, a_norm),
        "positive": normalize_backward(grad_p, p, p_norm),
        "negatives": normalize_backward(grad_n, n, n_norm),
    }
