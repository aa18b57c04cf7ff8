"""Run defaults from the environment, layered with an optional YAML run file and flags."""

from __future__ import annotations

import logging
import os
from collections.abc import Mapping
from dataclasses import dataclass, field
from os import environ
from pathlib import Path
from typing import Any

import yaml
from dotenv import load_dotenv

from .audit import MIN_MINORITY, EvaluationProtocol
from .errors import UsageError
from .tree import TreeParams

log = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

RUN_FILE_KEYS = frozenset({
    "seed", "output_dir", "threads", "data", "schema", "max_depth", "min_samples_split",
    "min_samples_leaf", "protocol", "folds", "holdout_fraction", "retrain_per_subset",
    "exclude_split_feature", "min_minority",
})


def _int_var(name: str, default: int, minimum: int) -> int:
    raw = environ.get(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}") from None
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


@dataclass(frozen=True)
class Settings:
    seed: int = 7
    output_dir: Path = Path("runs")
    threads: int = 1
    log_level: str = "INFO"

    @classmethod
    def from_env(cls, env_path: Path | None = None) -> Settings:
        load_dotenv(env_path)

        log_level = environ.get("UPK_LOG_LEVEL", "INFO").strip().upper() or "INFO"
        if log_level not in LOG_LEVELS:
            raise ValueError(f"UPK_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}")

        return cls(
            seed=_int_var("UPK_SEED", 7, minimum=0),
            output_dir=Path(environ.get("UPK_OUTPUT_DIR", "runs")).expanduser(),
            threads=_int_var("UPK_THREADS", 1, minimum=1),
            log_level=log_level,
        )


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int
    output_dir: Path
    threads: int = 1
    data: tuple[Path, ...] = ()
    schema: Path | None = None
    tree: TreeParams = field(default_factory=TreeParams)
    protocol: EvaluationProtocol = field(default_factory=EvaluationProtocol)
    min_minority: int = MIN_MINORITY

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise UsageError(f"seed must be non-negative, got {self.seed}")
        if self.threads < 1:
            raise UsageError(f"threads must be >= 1, got {self.threads}")
        if self.min_minority < 1:
            raise UsageError(f"min_minority must be >= 1, got {self.min_minority}")

    def ensure_output_dir(self) -> Path:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise UsageError(f"cannot create output directory {self.output_dir}: {e}") from e
        if not os.access(self.output_dir, os.W_OK):
            raise UsageError(f"output directory is not writable: {self.output_dir}")
        return self.output_dir

    def echo(self) -> dict[str, Any]:
        """Parameters as plain values, for manifests and reports."""
        return {
            "command": self.command,
            "seed": self.seed,
            "threads": self.threads,
            "data": [str(p) for p in self.data],
            "schema": None if self.schema is None else str(self.schema),
            "tree": {
                "criterion": "gini",
                "max_depth": self.tree.max_depth,
                "min_samples_split": self.tree.min_samples_split,
                "min_samples_leaf": self.tree.min_samples_leaf,
            },
            "protocol": {
                "kind": self.protocol.kind,
                "folds": self.protocol.folds,
                "holdout_fraction": self.protocol.holdout_fraction,
                "retrain_per_subset": self.protocol.retrain_per_subset,
                "exclude_split_feature": self.protocol.exclude_split_feature,
                "descriptor": self.protocol.descriptor,
            },
            "min_minority": self.min_minority,
        }


def load_run_file(path: Path) -> dict[str, Any]:
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise UsageError(f"run file not found: {path}") from e
    except yaml.YAMLError as e:
        raise UsageError(f"run file {path} is not valid YAML: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"run file {path} must be a mapping")
    unknown = sorted(set(data) - RUN_FILE_KEYS)
    if unknown:
        raise UsageError(f"run file {path}: unknown keys {', '.join(unknown)}")
    return data


def build_run_config(
    command: str,
    settings: Settings,
    file_values: Mapping[str, Any] | None = None,
    flags: Mapping[str, Any] | None = None,
) -> RunConfig:
    """Merge settings < run file < flags; a flag set to None leaves the lower layer in place."""
    merged: dict[str, Any] = {
        "seed": settings.seed,
        "output_dir": settings.output_dir,
        "threads": settings.threads,
    }
    merged.update(file_values or {})
    merged.update({k: v for k, v in (flags or {}).items() if v is not None})

    try:
        seed = int(merged["seed"])
        tree = TreeParams(
            max_depth=None if merged.get("max_depth") is None else int(merged["max_depth"]),
            min_samples_split=int(merged.get("min_samples_split", 2)),
            min_samples_leaf=int(merged.get("min_samples_leaf", 1)),
        )
        protocol = EvaluationProtocol(
            kind=merged.get("protocol", "cv"),
            folds=int(merged.get("folds", 5)),
            holdout_fraction=float(merged.get("holdout_fraction", 0.3)),
            seed=seed,
            retrain_per_subset=bool(merged.get("retrain_per_subset", False)),
            exclude_split_feature=bool(merged.get("exclude_split_feature", False)),
        )
        data = merged.get("data") or ()
        schema = merged.get("schema")
        config = RunConfig(
            command=command,
            seed=seed,
            output_dir=Path(merged["output_dir"]),
            threads=int(merged["threads"]),
            data=tuple(Path(p) for p in ([data] if isinstance(data, str | Path) else data)),
            schema=None if schema is None else Path(schema),
            tree=tree,
            protocol=protocol,
            min_minority=int(merged.get("min_minority", MIN_MINORITY)),
        )
    except UsageError:
        raise
    except (TypeError, ValueError) as e:
        raise UsageError(str(e)) from e
    log.debug("Run config: %s", config)
    return config
