"""
Synthetic-world experiments. Deselected by default; run with `pytest -m slow`.
"""

from functools import lru_cache

import pytest

from data.interactions import split_per_user
from data.synthetic import LatentWorldConfig, generate_world
from diagnostics.complementarity import complementarity_sweep
from diagnostics.metrics import recall_at_k
from diagnostics.ranking import evaluate
from models.cf import train_cf
from models.fusion import train_fusion
from models.semantic import train_sem
from models.training import TrainConfig
from probe.mapping import ProbeConfig
from probe.runner import run_probe

pytestmark = pytest.mark.slow

SEEDS = (1, 2, 3)


def _train_cfg(seed):
    return TrainConfig(
        embedding_dim=32, lr=0.01, batch_size=1024, max_epochs=100, eval_every=5, patience=4, n_neg=128, seed=seed
    )


@lru_cache(maxsize=None)
def _world(alpha, seed):
    world = generate_world(LatentWorldConfig(alpha=alpha, seed=seed))
    return world, split_per_user(world.dataset, (0.8, 0.1, 0.1), seed)


@lru_cache(maxsize=None)
def _views(alpha, seed):
    world, split = _world(alpha, seed)
    cfg = _train_cfg(seed)
    return train_cf(split, cfg), train_sem(split, world.item_vectors, cfg)


def _probe(alpha, seed, archs, solver="adam"):
    _, split = _world(alpha, seed)
    cf, sem = _views(alpha, seed)
    users, items = cf.propagated()
    cfg = ProbeConfig(archs=list(archs), seed=seed, max_epochs=500, lr=1e-2, solver=solver)
    return run_probe(sem.item_projection(), items, users, split, cfg).to_frame()


@pytest.mark.parametrize("seed", SEEDS)
def test_linear_probe_tracks_shared_fraction(seed):
    r2 = []
    for alpha in (0.2, 0.6, 1.0):
        frame = _probe(alpha, seed, ["Linear"], solver="lstsq")
        r2.append(float(frame[frame["Partition"] == "test"]["R2"].iloc[0]))
    assert r2[0] < r2[1] < r2[2]


def test_linear_probe_recovers_rotated_world():
    frame = _probe(1.0, 1, ["Linear"], solver="lstsq")
    assert float(frame[frame["Partition"] == "test"]["R2"].iloc[0]) > 0.9


def test_deep_probes_fit_train_but_not_test():
    frame = _probe(0.2, 1, ["Linear", "MLP-2"]).set_index(["Model", "Partition"])
    assert frame.loc[("MLP-2", "train"), "R2"] >= frame.loc[("Linear", "train"), "R2"] + 0.1
    assert frame.loc[("MLP-2", "test"), "R2"] <= frame.loc[("Linear", "test"), "R2"] + 0.05


@pytest.mark.parametrize("seed", SEEDS)
def test_fusion_beats_best_single_view(seed):
    world, split = _world(0.5, seed)
    cf, sem = _views(0.5, seed)
    fused = train_fusion(split, world.item_vectors, _train_cfg(seed))
    res = {name: evaluate(m.scorer(), split, "val", 20) for name, m in (("cf", cf), ("sem", sem), ("fused", fused))}
    best = max(recall_at_k(res["cf"]), recall_at_k(res["sem"]))
    assert recall_at_k(res["fused"]) >= 1.05 * best
    uub = complementarity_sweep(cf.scorer(), sem.scorer(), split, [20], part="val").loc[0, "UUB"]
    assert recall_at_k(res["fused"]) <= uub


@pytest.mark.parametrize("seed", SEEDS)
def test_views_hit_different_items(seed):
    _, split = _world(0.5, seed)
    cf, sem = _views(0.5, seed)
    frame = complementarity_sweep(cf.scorer(), sem.scorer(), split, [5, 20]).set_index("K")
    assert frame.loc[20, "HitJaccard"] < 0.5
    assert frame.loc[20, "CompRatio(macro)"] > 0.5
    assert frame.loc[5, "CompRatio(macro)"] >= frame.loc[20, "CompRatio(macro)"]
