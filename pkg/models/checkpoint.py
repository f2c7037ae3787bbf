from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional, Union

import numpy as np

from data.bundle import DatasetBundle
from data.embeddings import EmbeddingMatrix, save_embeddings
from errors import FormatError, MissingArtifactError, ValidationError
from models.cf import CfModel
from models.fusion import FusionModel, init_fusion_model
from models.graph import build_train_graph
from models.semantic import SemModel, init_sem_model, user_semantic_inputs
from models.training import NegativeSampler, TrainConfig

META_FILE = "meta.json"
KINDS = ("cf", "sem", "fusion")
PRODUCERS = {"cf": "app.py train-cf", "sem": "app.py train-sem", "fusion": "app.py train-fusion"}

Model = Union[CfModel, SemModel, FusionModel]


@dataclass
class Checkpoint:
    kind: str
    model: Model
    meta: Dict[str, Any]


def model_kind(model: Model) -> str:
    if isinstance(model, FusionModel):
        return "fusion"
    if isinstance(model, SemModel):
        return "sem"
    if isinstance(model, CfModel):
        return "cf"
    raise ValidationError(f"cannot checkpoint a {type(model).__name__}")


def _export_representations(model: Model, out_dir: str) -> Dict[str, str]:
    """Scoring-time user/item representations, in the embedding file format."""
    files: Dict[str, str] = {}
    branches = ("fused", "cf", "sem") if isinstance(model, FusionModel) else (None,)
    for branch in branches:
        scorer = model.scorer() if branch is None else model.scorer(branch)
        suffix = "" if branch in (None, "fused") else f"_{branch}"
        for side, values in (("users", scorer.user_reps), ("items", scorer.item_reps)):
            name = f"{side}{suffix}.emb"
            save_embeddings(EmbeddingMatrix(values, id_space=side), os.path.join(out_dir, name))
            files[f"{side}{suffix}"] = name
    return files


def save_checkpoint(
    model: Model,
    out_dir: str,
    cfg: TrainConfig,
    dataset_hash: str,
    config_hash: str,
) -> Dict[str, Any]:
    """
    Write a checkpoint directory: exact float64 parameters (.npy), the
    representations used for scoring (.emb) and a meta.json sidecar.
    Nothing time-dependent is written, so reruns are byte-identical.
    """
    os.makedirs(out_dir, exist_ok=True)
    kind = model_kind(model)
    params = model.parameters()
    for name, value in params.items():
        np.save(os.path.join(out_dir, f"{name}.npy"), np.ascontiguousarray(value, dtype="<f8"))
    history = model.history.as_dict() if model.history is not None else {}
    meta = {
        "kind": kind,
        "d": int(model.d),
        "n_layers": int(getattr(model, "n_layers", 0)),
        "parameters": sorted(params),
        "representations": _export_representations(model, out_dir),
        "config": cfg.dict(),
        "config_hash": config_hash,
        "dataset_hash": dataset_hash,
        "best_epoch": history.get("best_epoch"),
        "best_val_metric": _json_number(history.get("best_val_metric")),
        "stopped_epoch": history.get("stopped_epoch"),
        "evaluations": [[e, _json_number(v)] for e, v in history.get("evaluations", [])],
    }
    with open(os.path.join(out_dir, META_FILE), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return meta


def _json_number(value: Optional[float]) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


def read_meta(ckpt_dir: str, expected_kind: Optional[str] = None) -> Dict[str, Any]:
    path = os.path.join(ckpt_dir, META_FILE)
    if not os.path.exists(path):
        raise MissingArtifactError(path, PRODUCERS.get(expected_kind, "app.py train-cf / train-sem / train-fusion"))
    with open(path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("kind") not in KINDS:
        raise FormatError(f"{path}: unknown checkpoint kind {meta.get('kind')!r}")
    if expected_kind is not None and meta["kind"] != expected_kind:
        raise ValidationError(f"{ckpt_dir} holds a {meta['kind']} checkpoint, expected {expected_kind}")
    return meta


def load_checkpoint(ckpt_dir: str, bundle: DatasetBundle, expected_kind: Optional[str] = None) -> Checkpoint:
    """Rebuild a trained model from its checkpoint and the dataset bundle it was trained on."""
    meta = read_meta(ckpt_dir, expected_kind)
    if meta["dataset_hash"] != bundle.dataset_hash:
        raise ValidationError(
            f"{ckpt_dir} was trained on dataset {meta['dataset_hash'][:12]}, "
            f"the bundle is {bundle.dataset_hash[:12]}"
        )
    params = {}
    for name in meta["parameters"]:
        path = os.path.join(ckpt_dir, f"{name}.npy")
        if not os.path.exists(path):
            raise MissingArtifactError(path, PRODUCERS[meta["kind"]])
        params[name] = np.load(path)

    cfg = TrainConfig(**meta["config"])
    split = bundle.split
    kind = meta["kind"]
    if kind == "cf":
        model: Model = CfModel(
            user_emb=params["user_emb"],
            item_emb=params["item_emb"],
            n_layers=meta["n_layers"],
            graph=build_train_graph(split),
            sampler=NegativeSampler(split.matrix("train")),
        )
    else:
        if bundle.item_vectors is None:
            raise MissingArtifactError(os.path.join("<bundle>", "item_vectors.emb"), "app.py ingest --item-vectors")
        vectors = np.asarray(bundle.item_vectors.values, dtype=np.float64)
        if kind == "sem":
            model = init_sem_model(vectors, user_semantic_inputs(split.matrix("train"), vectors), cfg)
        else:
            model = init_fusion_model(split, vectors, cfg)
        model.load_parameters(params)
    return Checkpoint(kind=kind, model=model, meta=meta)
