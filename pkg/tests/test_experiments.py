import json
import math

import numpy as np
import pandas as pd
import pytest

from errors import ConfigError, MissingArtifactError, ValidationError
from experiments import artifacts
from experiments.config import (
    ExperimentConfig,
    build_model_config,
    check_known_keys,
    config_hash,
    merge_layers,
    parse_bool,
    parse_list,
    parse_overrides,
    read_config_file,
    write_config,
)
from experiments.report import build_report
from models.training import TrainConfig
from probe.mapping import ProbeConfig


class TestConfigLayers:
    def test_flags_beat_overrides_beat_file(self):
        merged = merge_layers({"lr": "0.1", "seed": "1"}, {"lr": "0.2"}, {"lr": 0.3, "seed": None})
        assert merged == {"lr": 0.3, "seed": "1"}

    def test_config_file_sections(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[defaults]\nseed = 4\nlr = 0.1\n\n[train-cf]\nlr = 0.05\nmax-epochs = 3\n", encoding="utf-8")
        assert read_config_file(str(path), "train-cf") == {"seed": "4", "lr": "0.05", "max_epochs": "3"}
        assert read_config_file(str(path), "probe") == {"seed": "4", "lr": "0.1"}

    def test_missing_and_broken_files(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            read_config_file(str(tmp_path / "absent.ini"), "ingest")
        broken = tmp_path / "broken.ini"
        broken.write_text("no section header\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            read_config_file(str(broken), "ingest")

    def test_overrides(self):
        assert parse_overrides(["batch-size=512", "lr = 0.01"]) == {"batch_size": "512", "lr": "0.01"}
        with pytest.raises(ConfigError):
            parse_overrides(["lr"])

    def test_model_config_from_strings(self):
        cfg = build_model_config(TrainConfig, {"lr": "0.01", "max_epochs": "3", "data": "ignored"})
        assert cfg.lr == 0.01 and cfg.max_epochs == 3
        probe = build_model_config(ProbeConfig, {"archs": "linear, mlp1"})
        assert probe.archs == ["Linear", "MLP-1"]

    def test_invalid_model_config(self):
        with pytest.raises(ConfigError, match="lr"):
            build_model_config(TrainConfig, {"lr": "-1"})

    def test_unknown_keys(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            check_known_keys({"learning_rate": 1}, {"lr"}, "train-cf")

    def test_value_parsers(self):
        assert parse_list("5, 10,20", int) == [5, 10, 20]
        assert parse_list(None) == []
        assert parse_bool("yes") is True and parse_bool("0") is False
        with pytest.raises(ConfigError):
            parse_list("5,x", int)
        with pytest.raises(ConfigError):
            parse_bool("maybe")


class TestConfigHash:
    def test_output_dir_does_not_change_hash(self):
        a = ExperimentConfig(command="train-cf", out="/tmp/a", seed=1, train={"lr": 0.1})
        b = ExperimentConfig(command="train-cf", out="/tmp/b", seed=1, train={"lr": 0.1})
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(ExperimentConfig(command="train-cf", out="/tmp/a", seed=2, train={"lr": 0.1}))

    def test_config_json_keeps_every_command(self, tmp_path):
        write_config(ExperimentConfig(command="ingest", out=str(tmp_path)), str(tmp_path))
        write_config(ExperimentConfig(command="train-cf", out=str(tmp_path), seed=3), str(tmp_path))
        saved = json.loads((tmp_path / "config.json").read_text(encoding="utf-8"))
        assert set(saved) == {"ingest", "train-cf"}
        assert saved["train-cf"]["seed"] == 3
        assert len(saved["ingest"]["config_hash"]) == 64


class TestArtifacts:
    def test_to_jsonable(self):
        value = {"a": np.float32(1.5), "b": [float("nan"), np.arange(2)], 3: float("inf")}
        assert artifacts.to_jsonable(value) == {"a": 1.5, "b": [None, [0, 1]], "3": None}

    def test_manifest_accumulates(self, tmp_path):
        first = artifacts.write_json(str(tmp_path / "stats.json"), {"Users": 1})
        artifacts.record_artifacts(str(tmp_path), {"stats": first}, "ingest", "c1", "d1")
        second = artifacts.write_table(str(tmp_path / "sweep.csv"), pd.DataFrame({"K": [1]}))
        artifacts.record_artifacts(str(tmp_path), {"sweep": second}, "diagnose", "c2", "d1")
        manifest = artifacts.read_json(str(tmp_path / artifacts.MANIFEST_FILE))
        assert manifest["stats.json"]["command"] == "ingest"
        assert manifest["sweep.csv"] == {"command": "diagnose", "config_hash": "c2", "dataset_hash": "d1"}

    def test_corrupt_json(self, tmp_path):
        (tmp_path / "x.json").write_text("{", encoding="utf-8")
        from errors import FormatError

        with pytest.raises(FormatError):
            artifacts.read_json(str(tmp_path / "x.json"))


def _table(run_dir, name, frame, digest="d" * 64):
    path = artifacts.write_table(str(run_dir / name), frame)
    artifacts.record_artifacts(str(run_dir), {"t": path}, "diagnose", "c", digest)


class TestBuildReport:
    def test_empty_directory(self, tmp_path):
        assert build_report(str(tmp_path)) is None

    def test_tables_from_subdirectories_get_a_source(self, tmp_path):
        frame = pd.DataFrame({"K": [5], "UUB": [0.4], "Recall(A)": [0.3], "Recall(B)": [0.2]})
        for sub in ("alpha_0", "alpha_1"):
            (tmp_path / sub).mkdir()
            _table(tmp_path / sub, artifacts.COMPLEMENTARITY_CSV, frame)
        report = build_report(str(tmp_path))
        table = report["tables"]["complementarity"]
        assert table["Source"].tolist() == ["alpha_0", "alpha_1"]
        assert report["dataset_hash"] == "d" * 64

    def test_mixed_datasets_are_rejected(self, tmp_path):
        frame = pd.DataFrame({"K": [5]})
        for sub, digest in (("a", "1" * 64), ("b", "2" * 64)):
            (tmp_path / sub).mkdir()
            _table(tmp_path / sub, artifacts.SWEEP_CSV, frame, digest)
        with pytest.raises(ValidationError, match="different datasets"):
            build_report(str(tmp_path))

    def test_union_bound_violation_is_rejected(self, tmp_path):
        frame = pd.DataFrame({"Recall@20(Sem)": [0.3], "Recall@20(CF)": [0.5], "UUB@20": [0.4]})
        _table(tmp_path, artifacts.FUSION_CSV, frame)
        with pytest.raises(ValidationError, match="UUB@20"):
            build_report(str(tmp_path))

    def test_missing_values_survive(self, tmp_path):
        frame = pd.DataFrame({"K": [5], "CompRatio(macro)": [float("nan")]})
        _table(tmp_path, artifacts.SWEEP_CSV, frame)
        table = build_report(str(tmp_path))["tables"]["sweep"]
        assert math.isnan(table.loc[0, "CompRatio(macro)"])

    def test_fused_recall_above_union_bound_is_flagged(self, tmp_path, isolated_logs):
        frame = pd.DataFrame(
            {"Recall@20(Sem)": [0.3], "Recall@20(CF)": [0.35], "Recall@20(Fused)": [0.6], "UUB@20": [0.5]}
        )
        _table(tmp_path, artifacts.FUSION_CSV, frame)
        assert build_report(str(tmp_path)) is not None
        log = (isolated_logs / "workbench.log").read_text(encoding="utf-8")
        assert "Event type: FUSED_ABOVE_UUB" in log
        assert "rows: 0" in log
