from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from data.embeddings import EmbeddingMatrix, load_embeddings, save_embeddings
from data.interactions import InteractionDataset, SplitDataset, dataset_stats
from errors import MissingArtifactError, ValidationError

ARRAY_NAMES = ("users", "items", "timestamps", "train", "val", "test")


@dataclass
class DatasetBundle:
    split: SplitDataset
    item_vectors: Optional[EmbeddingMatrix]
    dataset_hash: str
    manifest: Dict[str, Any]


def dataset_hash(split: SplitDataset, item_vectors: Optional[EmbeddingMatrix] = None) -> str:
    h = hashlib.sha256()
    base = split.base
    h.update(f"{base.n_users}:{base.n_items}:{split.ratios}:{split.seed}".encode("utf-8"))
    for arr in (base.users, base.items, split.train, split.val, split.test):
        h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    if item_vectors is not None:
        h.update(np.ascontiguousarray(item_vectors.values, dtype="<f4").tobytes())
    return h.hexdigest()


def save_dataset_bundle(
    split: SplitDataset,
    out_dir: str,
    item_vectors: Optional[EmbeddingMatrix] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    os.makedirs(out_dir, exist_ok=True)
    base = split.base
    if item_vectors is not None:
        item_vectors.check_rows(base.n_items)
    arrays = {
        "users": base.users,
        "items": base.items,
        "timestamps": base.timestamps,
        "train": split.train,
        "val": split.val,
        "test": split.test,
    }
    for name, arr in arrays.items():
        if arr is not None:
            np.save(os.path.join(out_dir, f"{name}.npy"), np.ascontiguousarray(arr, dtype="<i8"))
    with open(os.path.join(out_dir, "raw_ids.json"), "w", encoding="utf-8") as f:
        json.dump({"users": base.user_raw_ids, "items": base.item_raw_ids}, f, ensure_ascii=False)
    if item_vectors is not None:
        save_embeddings(item_vectors, os.path.join(out_dir, "item_vectors.emb"), fmt="binary")

    manifest = {
        "dataset_hash": dataset_hash(split, item_vectors),
        "n_users": base.n_users,
        "n_items": base.n_items,
        "ratios": list(split.ratios),
        "seed": split.seed,
        "n_forced": split.n_forced,
        "has_item_vectors": item_vectors is not None,
        "stats": dataset_stats(base),
        "split_sizes": {"train": int(split.train.size), "val": int(split.val.size), "test": int(split.test.size)},
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(out_dir, "dataset.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def load_dataset_bundle(bundle_dir: str) -> DatasetBundle:
    manifest_path = os.path.join(bundle_dir, "dataset.json")
    if not os.path.exists(manifest_path):
        raise MissingArtifactError(manifest_path, "app.py ingest (or app.py synth)")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    arrays = {}
    for name in ARRAY_NAMES:
        path = os.path.join(bundle_dir, f"{name}.npy")
        arrays[name] = np.load(path) if os.path.exists(path) else None
    with open(os.path.join(bundle_dir, "raw_ids.json"), "r", encoding="utf-8") as f:
        raw = json.load(f)

    base = InteractionDataset(
        n_users=manifest["n_users"],
        n_items=manifest["n_items"],
        users=arrays["users"],
        items=arrays["items"],
        timestamps=arrays["timestamps"],
        user_raw_ids=raw["users"],
        item_raw_ids=raw["items"],
    )
    split = SplitDataset(
        base=base,
        train=arrays["train"],
        val=arrays["val"],
        test=arrays["test"],
        seed=manifest["seed"],
        ratios=tuple(manifest["ratios"]),
        n_forced=manifest.get("n_forced", 0),
    )
    item_vectors = None
    if manifest.get("has_item_vectors"):
        item_vectors = load_embeddings(os.path.join(bundle_dir, "item_vectors.emb"))
        item_vectors.check_rows(base.n_items)
    digest = dataset_hash(split, item_vectors)
    if digest != manifest["dataset_hash"]:
        raise ValidationError(f"{bundle_dir}: dataset hash mismatch, the bundle was modified")
    return DatasetBundle(split=split, item_vectors=item_vectors, dataset_hash=digest, manifest=manifest)
