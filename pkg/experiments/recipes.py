from __future__ import annotations

import argparse
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple, Type

import numpy as np
from pydantic import BaseModel

from data.bundle import DatasetBundle, load_dataset_bundle, save_dataset_bundle
from data.embeddings import EmbeddingMatrix, align_rows, load_embeddings, read_row_ids, save_embeddings
from data.interactions import dataset_stats, kcore_filter, load_interactions, split_per_user
from data.popularity import popularity_strata
from data.synthetic import LatentWorldConfig, generate_world, save_world
from diagnostics.complementarity import (
    complementarity_sweep,
    composition_table,
    fusion_table,
    neighbors,
    single_view_table,
    strata_table,
)
from diagnostics.metrics import recall_at_k
from diagnostics.ranking import EmbeddingScorer, RankingResult, evaluate
from errors import ConfigError, MissingArtifactError, UsageError
from experiments import artifacts
from experiments.config import (
    ExperimentConfig,
    build_model_config,
    check_known_keys,
    config_hash,
    merge_layers,
    parse_list,
    parse_overrides,
    read_config_file,
    write_config,
)
from logging_utils import log_event, log_metrics
from models.cf import train_cf
from models.checkpoint import load_checkpoint, save_checkpoint
from models.fusion import FusionModel, train_fusion
from models.semantic import train_sem
from models.training import TrainConfig
from probe.alignment import alignment_report
from probe.mapping import ProbeConfig
from probe.runner import run_probe

CONTROL_KEYS = {"config", "set", "func", "command"}
DEFAULT_RATIOS = "0.8,0.1,0.1"
DEFAULT_KS = "5,10,20"
DEFAULT_SWEEP_KS = "1,2,3,5,10,15,20,30,50"


@dataclass
class CommandScope:
    cfg: ExperimentConfig
    config_hash: str
    records: List[Tuple[str, Dict[str, str], Optional[str]]] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)

    def record(self, out_dir: str, files: Dict[str, str], dataset_hash: Optional[str]) -> None:
        self.records.append((out_dir, dict(files), dataset_hash))


@contextmanager
def command_scope(cfg: ExperimentConfig) -> Iterator[CommandScope]:
    """Log start and end of a command, write config.json and register its outputs."""
    scope = CommandScope(cfg=cfg, config_hash=config_hash(cfg))
    started = time.time()
    log_event("COMMAND_START", command=cfg.command, seed=cfg.seed, config_hash=scope.config_hash, out=cfg.out)
    write_config(cfg, cfg.out)
    try:
        yield scope
    except Exception as exc:
        log_event(
            "COMMAND_FAILED",
            command=cfg.command,
            error_type=type(exc).__name__,
            error=str(exc),
            wall_seconds=round(time.time() - started, 3),
        )
        raise
    for out_dir, files, dataset_hash in scope.records:
        artifacts.record_artifacts(out_dir, files, cfg.command, scope.config_hash, dataset_hash)
    log_event(
        "COMMAND_DONE",
        command=cfg.command,
        seed=cfg.seed,
        config_hash=scope.config_hash,
        wall_seconds=round(time.time() - started, 3),
        files=sum(len(files) for _, files, _ in scope.records),
    )


def prepare(
    command: str,
    args: argparse.Namespace,
    model: Optional[Type[BaseModel]] = None,
    slot: Optional[str] = None,
) -> Tuple[ExperimentConfig, Dict[str, Any], Optional[BaseModel]]:
    """
    Resolve one command's settings: config file section, then --set pairs,
    then explicit flags. Returns the experiment config, the plain options
    and the validated model config (if the command has one).
    """
    flags = {k: v for k, v in vars(args).items() if k not in CONTROL_KEYS}
    file_values = read_config_file(args.config, command) if getattr(args, "config", None) else {}
    merged = merge_layers(file_values, parse_overrides(getattr(args, "set", None)), flags)
    model_fields = set(model.__fields__) if model is not None else set()
    check_known_keys(merged, set(flags) | model_fields, command)

    model_cfg = build_model_config(model, merged) if model is not None else None
    options = {k: v for k, v in merged.items() if k not in model_fields or k == "seed"}
    out = options.pop("out", None)
    if not out:
        raise UsageError(f"{command}: --out is required")
    try:
        seed = int(options.pop("seed", 0))
    except ValueError as exc:
        raise ConfigError(f"seed must be an integer: {exc}") from exc
    slots = {slot: model_cfg.dict()} if slot is not None and model_cfg is not None else {}
    cfg = ExperimentConfig(command=command, out=str(out), seed=seed, options=options, **slots)
    return cfg, options, model_cfg


def _require(options: Dict[str, Any], key: str, command: str) -> str:
    value = options.get(key)
    if not value:
        raise UsageError(f"{command}: --{key.replace('_', '-')} is required")
    return str(value)


def _load_bundle(options: Dict[str, Any], command: str) -> DatasetBundle:
    return load_dataset_bundle(_require(options, "data", command))


def _require_vectors(bundle: DatasetBundle) -> EmbeddingMatrix:
    if bundle.item_vectors is None:
        raise MissingArtifactError("item_vectors.emb in the dataset bundle", "app.py ingest --item-vectors")
    return bundle.item_vectors


def cmd_ingest(args: argparse.Namespace) -> Dict[str, Any]:
    cfg, options, _ = prepare("ingest", args)
    path = _require(options, "interactions", "ingest")
    ratios = parse_list(options.get("ratios", DEFAULT_RATIOS), float)
    with command_scope(cfg) as scope:
        raw = load_interactions(path)
        vectors = None
        if options.get("item_vectors"):
            loaded = load_embeddings(str(options["item_vectors"]), id_space="items")
            row_ids = read_row_ids(str(options["item_ids"])) if options.get("item_ids") else raw.item_raw_ids
            vectors = align_rows(loaded, row_ids, raw.item_raw_ids)
        kcore = int(options["kcore"]) if options.get("kcore") else None
        ds = kcore_filter(raw, kcore) if kcore else raw
        if vectors is not None and ds is not raw:
            vectors = align_rows(vectors, raw.item_raw_ids, ds.item_raw_ids)
        split = split_per_user(ds, ratios, cfg.seed)

        bundle_dir = os.path.join(cfg.out, artifacts.DATASET_DIR)
        manifest = save_dataset_bundle(split, bundle_dir, vectors, extra={"source": path, "kcore": kcore})
        stats = {
            **dataset_stats(ds),
            "raw": dataset_stats(raw),
            "kcore": kcore,
            "split_sizes": manifest["split_sizes"],
            "forced_split_users": split.n_forced,
            "dataset_hash": manifest["dataset_hash"],
        }
        stats_path = artifacts.write_json(os.path.join(cfg.out, artifacts.STATS_FILE), stats)
        scope.record(
            cfg.out,
            {"stats": stats_path, "bundle": os.path.join(bundle_dir, "dataset.json")},
            manifest["dataset_hash"],
        )
        log_metrics("ingest", stats)
        scope.summary = {"dataset": bundle_dir, "dataset_hash": manifest["dataset_hash"], "stats": stats}
    return scope.summary


def cmd_synth(args: argparse.Namespace) -> Dict[str, Any]:
    cfg, options, world_cfg = prepare("synth", args, LatentWorldConfig, slot="world")
    alphas = parse_list(options.get("alphas"), float) or [world_cfg.alpha]
    ratios = parse_list(options.get("ratios", DEFAULT_RATIOS), float)
    with command_scope(cfg) as scope:
        worlds = []
        for alpha in alphas:
            wcfg = build_model_config(LatentWorldConfig, {**world_cfg.dict(), "alpha": alpha})
            world = generate_world(wcfg)
            sub = os.path.join(cfg.out, f"alpha_{alpha:g}")
            paths = save_world(world, sub)
            split = split_per_user(world.dataset, ratios, cfg.seed)
            bundle_dir = os.path.join(sub, artifacts.DATASET_DIR)
            manifest = save_dataset_bundle(split, bundle_dir, world.item_vectors, extra={"world": wcfg.dict()})
            stats = {**dataset_stats(world.dataset), "alpha": alpha, "dataset_hash": manifest["dataset_hash"]}
            stats_path = artifacts.write_json(os.path.join(sub, artifacts.STATS_FILE), stats)
            scope.record(
                sub,
                {**paths, "stats": stats_path, "bundle": os.path.join(bundle_dir, "dataset.json")},
                manifest["dataset_hash"],
            )
            worlds.append({"alpha": alpha, "dataset": bundle_dir, "dataset_hash": manifest["dataset_hash"]})
        scope.summary = {"worlds": worlds}
    return scope.summary


def _train(kind: str, args: argparse.Namespace) -> Dict[str, Any]:
    command = f"train-{kind}"
    cfg, options, train_cfg = prepare(command, args, TrainConfig, slot="train")
    with command_scope(cfg) as scope:
        bundle = _load_bundle(options, command)
        split = bundle.split
        if kind == "cf":
            model = train_cf(split, train_cfg)
        elif kind == "sem":
            model = train_sem(split, _require_vectors(bundle), train_cfg)
        else:
            model = train_fusion(split, _require_vectors(bundle), train_cfg)
        ckpt = str(options.get("ckpt") or artifacts.checkpoint_dir(cfg.out, kind))
        meta = save_checkpoint(model, ckpt, train_cfg, bundle.dataset_hash, scope.config_hash)

        scorer = model.scorer()
        summary = {
            "kind": kind,
            "checkpoint": ckpt,
            "history": model.history.as_dict() if model.history else {},
            f"val_recall@{train_cfg.eval_k}": recall_at_k(evaluate(scorer, split, "val", train_cfg.eval_k)),
            f"test_recall@{train_cfg.eval_k}": recall_at_k(evaluate(scorer, split, "test", train_cfg.eval_k)),
        }
        summary_path = artifacts.write_json(os.path.join(cfg.out, f"train_{kind}.json"), summary)
        scope.record(
            cfg.out,
            {"meta": os.path.join(ckpt, "meta.json"), "summary": summary_path},
            bundle.dataset_hash,
        )
        log_metrics(command, {k: v for k, v in summary.items() if k != "history"})
        scope.summary = {**summary, "best_epoch": meta["best_epoch"]}
    return scope.summary


def cmd_train_cf(args: argparse.Namespace) -> Dict[str, Any]:
    return _train("cf", args)


def cmd_train_sem(args: argparse.Namespace) -> Dict[str, Any]:
    return _train("sem", args)


def cmd_train_fusion(args: argparse.Namespace) -> Dict[str, Any]:
    return _train("fusion", args)


def _probe_inputs(options: Dict[str, Any], command: str):
    bundle = _load_bundle(options, command)
    cf = load_checkpoint(_require(options, "cf", command), bundle, "cf").model
    sem = load_checkpoint(_require(options, "sem", command), bundle, "sem").model
    cf_users, cf_items = cf.propagated()
    return bundle, sem.item_projection(), cf_items, cf_users


def cmd_probe(args: argparse.Namespace) -> Dict[str, Any]:
    cfg, options, probe_cfg = prepare("probe", args, ProbeConfig, slot="probe")
    with command_scope(cfg) as scope:
        bundle, sem_items, cf_items, cf_users = _probe_inputs(options, "probe")
        report = run_probe(sem_items, cf_items, cf_users, bundle.split, probe_cfg)
        files = report.save(cfg.out, stem="probe")
        scope.record(cfg.out, files, bundle.dataset_hash)
        scope.summary = {"rows": len(report.rows), **files}
    return scope.summary


def cmd_align(args: argparse.Namespace) -> Dict[str, Any]:
    cfg, options, probe_cfg = prepare("align", args, ProbeConfig, slot="probe")
    with command_scope(cfg) as scope:
        bundle, sem_items, cf_items, cf_users = _probe_inputs(options, "align")
        report, result = alignment_report(sem_items, cf_items, cf_users, bundle.split, probe_cfg)
        files = report.save(cfg.out, stem="align")
        scope.record(cfg.out, files, bundle.dataset_hash)
        scope.summary = {
            "final_loss": result.final_loss,
            "retrieval_accuracy": result.retrieval_accuracy,
            **files,
        }
    return scope.summary


def _slug(label: str) -> str:
    return label.lower().replace(":", "_").replace(" ", "_")


def _diagnose_views(options: Dict[str, Any], bundle: DatasetBundle):
    """
    The two views to compare, as (label, scorer, kind) pairs, and the fused
    model when one was given. With only --fused, its internal branches are
    the two views.
    """
    fused: Optional[FusionModel] = None
    if options.get("fused"):
        fused = load_checkpoint(str(options["fused"]), bundle, "fusion").model
    if options.get("a") and options.get("b"):
        views = []
        for key in ("a", "b"):
            ckpt = load_checkpoint(str(options[key]), bundle)
            views.append((ckpt.kind.upper() if ckpt.kind != "sem" else "Sem", ckpt.model.scorer(), ckpt.kind))
        if views[0][0] == views[1][0]:
            views = [(f"{label}-{key.upper()}", s, k) for (label, s, k), key in zip(views, ("a", "b"))]
        return views, fused
    if options.get("a") or options.get("b"):
        raise UsageError("diagnose: --a and --b must be given together")
    if fused is None:
        raise UsageError("diagnose: give --a and --b, or --fused")
    return [("Fused:Sem", fused.scorer("sem"), "sem"), ("Fused:CF", fused.scorer("cf"), "cf")], fused


def _export_lists(path: str, result: RankingResult, bundle: DatasetBundle) -> str:
    base = bundle.split.base
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for user, items in zip(result.users, result.lists):
            for rank, item in enumerate(items, start=1):
                f.write(f"{base.user_raw_ids[user]}\t{rank}\t{base.item_raw_ids[item]}\n")
    return path


def cmd_diagnose(args: argparse.Namespace) -> Dict[str, Any]:
    cfg, options, _ = prepare("diagnose", args)
    ks = parse_list(options.get("k", DEFAULT_KS), int)
    sweep_ks = parse_list(options.get("sweep_k", DEFAULT_SWEEP_KS), int)
    if not ks or min(ks) < 1 or (sweep_ks and min(sweep_ks) < 1):
        raise UsageError("diagnose: every K must be >= 1")
    with command_scope(cfg) as scope:
        bundle = _load_bundle(options, "diagnose")
        split = bundle.split
        views, fused = _diagnose_views(options, bundle)
        (label_a, scorer_a, _), (label_b, scorer_b, _) = views
        out = cfg.out
        files: Dict[str, str] = {}

        comp = complementarity_sweep(scorer_a, scorer_b, split, ks)
        comp.insert(0, "B", label_b)
        comp.insert(0, "A", label_a)
        files["complementarity"] = artifacts.write_table(os.path.join(out, artifacts.COMPLEMENTARITY_CSV), comp)
        if sweep_ks:
            sweep = complementarity_sweep(scorer_a, scorer_b, split, sweep_ks)
            files["sweep"] = artifacts.write_table(os.path.join(out, artifacts.SWEEP_CSV), sweep)

        k_main = 20 if 20 in ks else max(ks)
        scorers: Dict[str, EmbeddingScorer] = {label_a: scorer_a, label_b: scorer_b}
        if fused is not None and "Fused" not in scorers:
            scorers["Fused"] = fused.scorer("fused")
        results = {label: evaluate(s, split, "test", k_main) for label, s in scorers.items()}
        files["single_view"] = artifacts.write_table(
            os.path.join(out, artifacts.SINGLE_VIEW_CSV), single_view_table(results)
        )
        popularity = popularity_strata(split)
        files["strata"] = artifacts.write_table(
            os.path.join(out, artifacts.STRATA_CSV), strata_table(results, popularity)
        )

        if fused is not None:
            by_kind = {kind: label for label, _, kind in views}
            branch_sem = evaluate(fused.scorer("sem"), split, "test", k_main)
            branch_cf = evaluate(fused.scorer("cf"), split, "test", k_main)
            sem_res = results[by_kind["sem"]] if "sem" in by_kind else branch_sem
            cf_res = results[by_kind["cf"]] if "cf" in by_kind else branch_cf
            files["fusion"] = artifacts.write_table(
                os.path.join(out, artifacts.FUSION_CSV), fusion_table(results["Fused"], sem_res, cf_res)
            )
            files["composition"] = artifacts.write_table(
                os.path.join(out, artifacts.COMPOSITION_CSV),
                composition_table(results["Fused"], branch_sem, branch_cf, popularity),
            )

        if options.get("export_lists"):
            for label, res in results.items():
                files[f"lists_{_slug(label)}"] = _export_lists(
                    os.path.join(out, "lists", f"{_slug(label)}.tsv"), res, bundle
                )
        if options.get("export_embeddings"):
            for label, s in scorers.items():
                for side, values in (("users", s.user_reps), ("items", s.item_reps)):
                    path = os.path.join(out, "embeddings", f"{_slug(label)}_{side}.emb")
                    save_embeddings(EmbeddingMatrix(values, id_space=side), path)
                    files[f"emb_{_slug(label)}_{side}"] = path
        if options.get("anchors"):
            files["neighbors"] = _export_neighbors(options, scorers, bundle, out)

        scope.record(out, files, bundle.dataset_hash)
        scope.summary = {"views": [label_a, label_b], "k": ks, "files": sorted(files)}
    return scope.summary


def _export_neighbors(
    options: Dict[str, Any],
    scorers: Dict[str, EmbeddingScorer],
    bundle: DatasetBundle,
    out: str,
) -> str:
    base = bundle.split.base
    index = {raw: i for i, raw in enumerate(base.item_raw_ids)}
    anchors_raw = parse_list(options["anchors"])
    unknown = [raw for raw in anchors_raw if raw not in index]
    if unknown:
        raise UsageError(f"diagnose: unknown anchor item(s): {', '.join(unknown)}")
    anchors = np.array([index[raw] for raw in anchors_raw], dtype=np.int64)
    n = int(options.get("neighbors") or 10)
    payload = {}
    for label, s in scorers.items():
        found = neighbors(s.item_reps, anchors, n)
        payload[label] = {
            base.item_raw_ids[a]: [base.item_raw_ids[i] for i in ids] for a, ids in found.items()
        }
    return artifacts.write_json(os.path.join(out, "neighbors.json"), payload)
