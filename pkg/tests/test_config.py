"""Tests for config module."""

from pathlib import Path

import pytest

from underprediction_kit.config import (
    RunConfig,
    Settings,
    build_run_config,
    load_run_file,
)
from underprediction_kit.errors import UsageError

ENV_VARS = ("UPK_SEED", "UPK_OUTPUT_DIR", "UPK_THREADS", "UPK_LOG_LEVEL")


@pytest.fixture()
def clean_env(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> Path:
    for name in ENV_VARS:
        monkeypatch.delenv(name, raising=False)
    return tmp_path / ".env.nonexistent"


class TestSettings:
    def test_defaults(self, clean_env: Path) -> None:
        s = Settings.from_env(env_path=clean_env)
        assert s == Settings(seed=7, output_dir=Path("runs"), threads=1, log_level="INFO")

    def test_from_env(self, clean_env: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("UPK_SEED", "42")
        monkeypatch.setenv("UPK_OUTPUT_DIR", "/tmp/upk-out")
        monkeypatch.setenv("UPK_THREADS", "4")
        monkeypatch.setenv("UPK_LOG_LEVEL", "debug")
        s = Settings.from_env(env_path=clean_env)
        assert (s.seed, s.output_dir, s.threads, s.log_level) == (
            42, Path("/tmp/upk-out"), 4, "DEBUG",
        )

    def test_dotenv_file(self, clean_env: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        env_file = clean_env.with_name(".env")
        env_file.write_text("UPK_SEED=13\n", encoding="utf-8")
        # registers UPK_SEED with monkeypatch so the value loaded below is undone
        monkeypatch.setenv("UPK_SEED", "0")
        monkeypatch.delenv("UPK_SEED")
        assert Settings.from_env(env_path=env_file).seed == 13

    def test_blank_value_uses_default(
        self, clean_env: Path, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        monkeypatch.setenv("UPK_THREADS", " ")
        assert Settings.from_env(env_path=clean_env).threads == 1

    def test_bad_integer(self, clean_env: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("UPK_SEED", "seven")
        with pytest.raises(ValueError, match="UPK_SEED"):
            Settings.from_env(env_path=clean_env)

    def test_below_minimum(self, clean_env: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("UPK_THREADS", "0")
        with pytest.raises(ValueError, match="UPK_THREADS"):
            Settings.from_env(env_path=clean_env)

    def test_bad_log_level(self, clean_env: Path, monkeypatch: pytest.MonkeyPatch) -> None:
        monkeypatch.setenv("UPK_LOG_LEVEL", "LOUD")
        with pytest.raises(ValueError, match="UPK_LOG_LEVEL"):
            Settings.from_env(env_path=clean_env)


class TestRunConfig:
    def test_validation(self, tmp_path: Path) -> None:
        with pytest.raises(UsageError, match="seed"):
            RunConfig("simulate", seed=-1, output_dir=tmp_path)
        with pytest.raises(UsageError, match="threads"):
            RunConfig("simulate", seed=1, output_dir=tmp_path, threads=0)
        with pytest.raises(UsageError, match="min_minority"):
            RunConfig("audit", seed=1, output_dir=tmp_path, min_minority=0)

    def test_ensure_output_dir(self, tmp_path: Path) -> None:
        out = tmp_path / "a" / "b"
        assert RunConfig("simulate", seed=1, output_dir=out).ensure_output_dir() == out
        assert out.is_dir()

    def test_output_dir_blocked_by_file(self, tmp_path: Path) -> None:
        blocker = tmp_path / "file"
        blocker.write_text("x", encoding="utf-8")
        with pytest.raises(UsageError, match="output directory"):
            RunConfig("simulate", seed=1, output_dir=blocker / "sub").ensure_output_dir()

    def test_echo(self, tmp_path: Path) -> None:
        echo = RunConfig("audit", seed=3, output_dir=tmp_path, data=(Path("a.csv"),)).echo()
        assert echo["data"] == ["a.csv"]
        assert echo["tree"]["criterion"] == "gini"
        assert echo["protocol"]["descriptor"] == "cv-5fold-stratified(global,seed=7)"
        assert echo["min_minority"] == 100


class TestLoadRunFile:
    def test_loads_mapping(self, tmp_path: Path) -> None:
        path = tmp_path / "run.yaml"
        path.write_text("seed: 5\nprotocol: holdout\n", encoding="utf-8")
        assert load_run_file(path) == {"seed": 5, "protocol": "holdout"}

    def test_empty_file(self, tmp_path: Path) -> None:
        path = tmp_path / "run.yaml"
        path.write_text("", encoding="utf-8")
        assert load_run_file(path) == {}

    def test_unknown_keys(self, tmp_path: Path) -> None:
        path = tmp_path / "run.yaml"
        path.write_text("seed: 5\nlearning_rate: 0.1\n", encoding="utf-8")
        with pytest.raises(UsageError, match="learning_rate"):
            load_run_file(path)

    def test_not_a_mapping(self, tmp_path: Path) -> None:
        path = tmp_path / "run.yaml"
        path.write_text("- a\n- b\n", encoding="utf-8")
        with pytest.raises(UsageError, match="mapping"):
            load_run_file(path)

    def test_missing(self, tmp_path: Path) -> None:
        with pytest.raises(UsageError, match="not found"):
            load_run_file(tmp_path / "absent.yaml")

    def test_invalid_yaml(self, tmp_path: Path) -> None:
        path = tmp_path / "run.yaml"
        path.write_text("seed: [1\n", encoding="utf-8")
        with pytest.raises(UsageError, match="not valid YAML"):
            load_run_file(path)


class TestBuildRunConfig:
    SETTINGS = Settings(seed=7, output_dir=Path("runs"), threads=2)

    def test_settings_only(self) -> None:
        config = build_run_config("simulate", self.SETTINGS)
        assert (config.seed, config.output_dir, config.threads) == (7, Path("runs"), 2)
        assert config.protocol.kind == "cv"
        assert config.tree.max_depth is None

    def test_layering(self) -> None:
        config = build_run_config(
            "audit",
            self.SETTINGS,
            {"seed": 11, "protocol": "holdout", "max_depth": 4, "data": "adult.data"},
            {"seed": 13, "protocol": None, "folds": 3},
        )
        assert config.seed == 13
        assert config.protocol.kind == "holdout"
        assert config.protocol.folds == 3
        assert config.protocol.seed == 13
        assert config.tree.max_depth == 4
        assert config.data == (Path("adult.data"),)

    def test_data_list(self) -> None:
        config = build_run_config(
            "audit", self.SETTINGS, flags={"data": [Path("a.csv"), Path("b.csv")]}
        )
        assert config.data == (Path("a.csv"), Path("b.csv"))

    def test_protocol_flags(self) -> None:
        config = build_run_config(
            "audit",
            self.SETTINGS,
            {"retrain_per_subset": True},
            {"exclude_split_feature": True, "retrain_per_subset": None},
        )
        assert config.protocol.retrain_per_subset
        assert config.protocol.exclude_split_feature

    def test_bad_values_become_usage_errors(self) -> None:
        with pytest.raises(UsageError, match="folds"):
            build_run_config("audit", self.SETTINGS, flags={"folds": 1})
        with pytest.raises(UsageError):
            build_run_config("audit", self.SETTINGS, {"threads": "many"})
        with pytest.raises(UsageError, match="protocol"):
            build_run_config("audit", self.SETTINGS, {"protocol": "bootstrap"})
