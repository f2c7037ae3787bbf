"""Shared fixtures: isolated log directory and small deterministic datasets."""

import numpy as np
import pytest

from config import get_settings
from data.interactions import InteractionDataset, split_per_user


def make_dataset(pairs, n_users=None, n_items=None):
    """InteractionDataset from (user, item) index pairs with synthetic raw ids."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n_users = int(pairs[:, 0].max()) + 1 if n_users is None else n_users
    n_items = int(pairs[:, 1].max()) + 1 if n_items is None else n_items
    return InteractionDataset(
        n_users=n_users,
        n_items=n_items,
        users=pairs[:, 0],
        items=pairs[:, 1],
        timestamps=None,
        user_raw_ids=[f"u{u}" for u in range(n_users)],
        item_raw_ids=[f"i{i}" for i in range(n_items)],
    )


def random_pairs(rng, n_users, n_items, per_user):
    """Every user gets `per_user` distinct items; every item is touched at least once."""
    pairs = []
    for u in range(n_users):
        for i in rng.choice(n_items, size=per_user, replace=False):
            pairs.append((u, int(i)))
    seen = {i for _, i in pairs}
    for i in range(n_items):
        if i not in seen:
            pairs.append((int(rng.integers(n_users)), i))
    pairs = sorted(set(pairs))
    return np.array(pairs, dtype=np.int64)


@pytest.fixture(autouse=True)
def isolated_logs(tmp_path, monkeypatch):
    """Send every log file of a test into its own temporary directory."""
    monkeypatch.setenv("COMPLAT_LOG_DIR", str(tmp_path / "logs"))
    get_settings.cache_clear()
    yield tmp_path / "logs"
    get_settings.cache_clear()


@pytest.fixture
def small_split():
    """30 users x 40 items, 8 interactions each, split 0.8/0.1/0.1 with seed 7."""
    rng = np.random.default_rng(3)
    ds = make_dataset(random_pairs(rng, 30, 40, 8), n_users=30, n_items=40)
    return split_per_user(ds, (0.8, 0.1, 0.1), seed=7)


@pytest.fixture
def item_vectors(small_split):
    rng = np.random.default_rng(11)
    return rng.normal(size=(small_split.n_items, 12))


def numeric_grad(fn, x, h=1e-5):
    """Central differences of scalar fn() with respect to array x, perturbed in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        up = fn()
        x[idx] = old - h
        down = fn()
        x[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))
