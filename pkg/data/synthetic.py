from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Dict

import numpy as np
from pydantic import BaseModel, root_validator, validator

from data.embeddings import EmbeddingMatrix, save_embeddings
from data.interactions import InteractionDataset, kcore_filter
from errors import ConfigError
from logging_utils import log_event
from seeding import substream


class LatentWorldConfig(BaseModel):
    n_users: int = 500
    n_items: int = 400
    k_shared: int = 16
    k_cf: int = 16
    k_sem: int = 16
    # Output width of the semantic vectors
    d_sem: int = 64
    alpha: float = 0.5
    interactions_per_user: int = 20
    noise_sigma: float = 0.0
    gumbel_scale: float = 0.5
    seed: int = 0

    @validator("n_users", "n_items", "interactions_per_user", "d_sem")
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @validator("k_shared", "k_cf", "k_sem")
    def _non_negative_dim(cls, value: int) -> int:
        if value < 0:
            raise ValueError("latent dimensions must be >= 0")
        return value

    @validator("alpha")
    def _alpha_range(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        return value

    @validator("noise_sigma", "gumbel_scale")
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @root_validator(skip_on_failure=True)
    def _dims(cls, values: Dict) -> Dict:
        if values["k_shared"] + values["k_cf"] + values["k_sem"] < 1:
            raise ValueError("k_shared + k_cf + k_sem must be >= 1")
        if values["k_shared"] + values["k_sem"] > values["d_sem"]:
            raise ValueError("d_sem must be at least k_shared + k_sem for orthonormal columns")
        return values


@dataclass
class LatentWorld:
    config: LatentWorldConfig
    z_shared: np.ndarray
    z_cf: np.ndarray
    z_sem: np.ndarray
    g_sem: np.ndarray
    user_shared: np.ndarray
    user_cf: np.ndarray
    dataset: InteractionDataset
    item_vectors: EmbeddingMatrix

    def utility_latent(self) -> np.ndarray:
        """Item factors the interaction utilities read: sqrt(a) z_shared (+) sqrt(1-a) z_cf."""
        a = self.config.alpha
        return np.hstack([np.sqrt(a) * self.z_shared, np.sqrt(1.0 - a) * self.z_cf])

    def utilities(self) -> np.ndarray:
        a = self.config.alpha
        return np.sqrt(a) * self.user_shared @ self.z_shared.T + np.sqrt(1.0 - a) * self.user_cf @ self.z_cf.T


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    if cols == 0:
        return np.zeros((rows, 0))
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    # Fix column signs so the factorization is unique
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def generate_world(cfg: LatentWorldConfig) -> LatentWorld:
    """
    Sample a shared-plus-private world.

    Latents only depend on the seed; alpha rescales them. Each user interacts
    with the top `interactions_per_user` items by utility plus Gumbel noise.
    Semantic vectors read (z_shared, z_sem) through a random orthonormal map.
    """
    if cfg.interactions_per_user >= cfg.n_items:
        raise ConfigError(
            f"interactions_per_user ({cfg.interactions_per_user}) must be below n_items ({cfg.n_items})"
        )
    rng = substream(cfg.seed, "world")
    z_shared = rng.standard_normal((cfg.n_items, cfg.k_shared))
    z_cf = rng.standard_normal((cfg.n_items, cfg.k_cf))
    z_sem = rng.standard_normal((cfg.n_items, cfg.k_sem))
    user_shared = rng.standard_normal((cfg.n_users, cfg.k_shared))
    user_cf = rng.standard_normal((cfg.n_users, cfg.k_cf))
    g_sem = _orthonormal_columns(rng, cfg.d_sem, cfg.k_shared + cfg.k_sem)
    gumbel = rng.gumbel(0.0, cfg.gumbel_scale, size=(cfg.n_users, cfg.n_items)) if cfg.gumbel_scale > 0 else 0.0
    sem_noise = rng.standard_normal((cfg.n_items, cfg.d_sem))

    a = cfg.alpha
    utility = np.sqrt(a) * user_shared @ z_shared.T + np.sqrt(1.0 - a) * user_cf @ z_cf.T
    noisy = utility + gumbel
    m = cfg.interactions_per_user
    # Descending utility, ties to the smaller item id
    chosen = np.argsort(-noisy, axis=1, kind="stable")[:, :m]

    sem_input = np.hstack([np.sqrt(a) * z_shared, np.sqrt(1.0 - a) * z_sem])
    vectors = sem_input @ g_sem.T + cfg.noise_sigma * sem_noise

    users = np.repeat(np.arange(cfg.n_users, dtype=np.int64), m)
    items = chosen.reshape(-1).astype(np.int64)
    dataset = InteractionDataset(
        n_users=cfg.n_users,
        n_items=cfg.n_items,
        users=users,
        items=items,
        timestamps=None,
        user_raw_ids=[f"u{u}" for u in range(cfg.n_users)],
        item_raw_ids=[f"i{i}" for i in range(cfg.n_items)],
    )

    # Items nobody picked are isolated; drop them and keep the latents aligned.
    picked = np.unique(items)
    if picked.size < cfg.n_items:
        dataset = kcore_filter(dataset, 1)
        z_shared, z_cf, z_sem, vectors = z_shared[picked], z_cf[picked], z_sem[picked], vectors[picked]

    world = LatentWorld(
        config=cfg,
        z_shared=z_shared,
        z_cf=z_cf,
        z_sem=z_sem,
        g_sem=g_sem,
        user_shared=user_shared,
        user_cf=user_cf,
        dataset=dataset,
        item_vectors=EmbeddingMatrix(values=vectors, id_space="items"),
    )
    log_event(
        "WORLD_GENERATED",
        alpha=a,
        seed=cfg.seed,
        n_users=dataset.n_users,
        n_items=dataset.n_items,
        isolated_items_dropped=cfg.n_items - dataset.n_items,
    )
    return world


def save_world(world: LatentWorld, out_dir: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    ds = world.dataset
    paths = {
        "interactions": os.path.join(out_dir, "interactions.tsv"),
        "item_vectors": os.path.join(out_dir, "item_vectors.emb"),
        "item_ids": os.path.join(out_dir, "item_ids.txt"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    with open(paths["interactions"], "w", encoding="utf-8") as f:
        for u, i in zip(ds.users, ds.items):
            f.write(f"{ds.user_raw_ids[u]}\t{ds.item_raw_ids[i]}\n")
    save_embeddings(world.item_vectors, paths["item_vectors"], fmt="binary")
    with open(paths["item_ids"], "w", encoding="utf-8") as f:
        f.writelines(f"{raw}\n" for raw in ds.item_raw_ids)
    manifest = {
        "config": world.config.dict(),
        "seed": world.config.seed,
        "n_users": ds.n_users,
        "n_items": ds.n_items,
        "n_interactions": ds.n_interactions,
    }
    with open(paths["manifest"], "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return paths
