"""Raw CSV ingestion: filter, drop missing, bin, and one-hot encode to a binary matrix."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    DegenerateGroupError,
    EmptyDatasetError,
    SchemaError,
    UnknownCategoryError,
)
from .schema import ColumnSpec, RowFilter, SchemaConfig

log = logging.getLogger(__name__)


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class Provenance:
    sources: tuple[tuple[str, str], ...] = ()
    """(path, sha256) for every input file, in load order."""
    schema_digest: str = ""
    rows_read: int = 0
    rows_filtered: int = 0
    rows_dropped_missing: int = 0


@dataclass(frozen=True, eq=False)
class EncodedDataset:
    """Binary feature matrix plus binary target, immutable once built."""

    features: np.ndarray
    target: np.ndarray
    feature_names: tuple[str, ...]
    feature_sources: tuple[str, ...] = ()
    """Raw column each feature was derived from (one-hot siblings share a source)."""
    name: str = "dataset"
    group_features: tuple[str, ...] = ()
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        n, m = self.features.shape
        if n == 0:
            raise EmptyDatasetError(f"dataset {self.name!r} has no rows")
        if self.target.shape != (n,):
            raise ValueError(f"target has shape {self.target.shape}, expected ({n},)")
        if len(self.feature_names) != m:
            raise ValueError(f"{len(self.feature_names)} names for {m} features")
        if len(set(self.feature_names)) != m:
            raise ValueError("feature names must be unique")
        if self.feature_sources and len(self.feature_sources) != m:
            raise ValueError("feature_sources must align with feature_names")
        if np.any(self.features > 1) or np.any(self.target > 1):
            raise ValueError("features and target must be binary {0, 1}")
        self.features.setflags(write=False)
        self.target.setflags(write=False)

    @classmethod
    def from_arrays(
        cls,
        features: np.ndarray | Sequence[Sequence[int]],
        target: np.ndarray | Sequence[int],
        feature_names: Sequence[str] | None = None,
        *,
        name: str = "dataset",
        group_features: Sequence[str] = (),
    ) -> EncodedDataset:
        x = np.array(features, dtype=np.uint8, ndmin=2)
        y = np.array(target, dtype=np.uint8)
        names = tuple(feature_names) if feature_names is not None else tuple(
            f"x{i}" for i in range(x.shape[1])
        )
        return cls(
            features=x,
            target=y,
            feature_names=names,
            feature_sources=names,
            name=name,
            group_features=tuple(group_features),
        )

    @property
    def n_rows(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def target_rate(self) -> float:
        return float(self.target.mean())

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise DataError(f"unknown feature {name!r} in dataset {self.name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.features[:, self.feature_index(name)]

    def subset(self, rows: np.ndarray) -> EncodedDataset:
        return EncodedDataset(
            features=self.features[rows],
            target=self.target[rows],
            feature_names=self.feature_names,
            feature_sources=self.feature_sources,
            name=self.name,
            group_features=self.group_features,
            provenance=self.provenance,
        )

    def without_features(self, names: Sequence[str]) -> EncodedDataset:
        drop = {self.feature_index(n) for n in names}
        keep = [i for i in range(self.n_features) if i not in drop]
        return EncodedDataset(
            features=self.features[:, keep],
            target=self.target,
            feature_names=tuple(self.feature_names[i] for i in keep),
            feature_sources=tuple(self.feature_sources[i] for i in keep)
            if self.feature_sources
            else (),
            name=self.name,
            group_features=tuple(g for g in self.group_features if g not in names),
            provenance=self.provenance,
        )

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update("\x1f".join(self.feature_names).encode("utf-8"))
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.target).tobytes())
        return h.hexdigest()

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=list(self.feature_names))
        frame["target"] = self.target
        return frame

    def dump_csv(self, path: Path) -> Path:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")
        log.info("Encoded matrix written to %s", path)
        return path


# ── Loading ─────────────────────────────────────────────────────────


def _read_frame(path: Path, schema: SchemaConfig) -> pd.DataFrame:
    try:
        return pd.read_csv(
            path,
            sep=schema.delimiter,
            header=0 if schema.header else None,
            names=list(schema.names) if schema.names else None,
            dtype=str,
            skipinitialspace=True,
            comment=schema.comment,
            na_values=[schema.missing_marker],
            keep_default_na=False,
        )
    except FileNotFoundError as e:
        raise DataError(f"data file not found: {path}") from e
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot parse {path} as delimited text: {e}") from e


def _filter_mask(frame: pd.DataFrame, f: RowFilter) -> pd.Series:
    raw = frame[f.column]
    mask = pd.Series(True, index=frame.index)
    if f.min is not None or f.max is not None:
        numeric = pd.to_numeric(raw, errors="coerce")
        if f.min is not None:
            mask &= numeric >= f.min
        if f.max is not None:
            mask &= numeric <= f.max
    text = raw.fillna("").astype(str).str.strip()
    if f.within:
        mask &= text.isin(f.within)
    if f.not_in:
        mask &= ~text.isin(f.not_in)
    return mask


def _encode_column(spec: ColumnSpec, values: pd.Series) -> tuple[list[str], np.ndarray]:
    """Return (feature names, binary matrix) derived from one raw column."""
    rule = spec.rule
    values = values.astype(str).str.strip()

    if rule.kind == "indicator":
        assert rule.name is not None
        return [rule.name], values.isin(rule.positive).to_numpy(np.uint8)[:, None]

    if rule.kind == "bins":
        numeric = pd.to_numeric(values, errors="coerce")
        bad = values[numeric.isna()]
        if not bad.empty:
            raise UnknownCategoryError(spec.name, bad.unique())
        labels = pd.cut(numeric, bins=list(rule.edges), labels=list(rule.labels), right=False)
        uncovered = values[labels.isna()]
        if not uncovered.empty:
            raise UnknownCategoryError(spec.name, uncovered.unique())
        categories = labels.astype(str)
    elif rule.kind == "merge":
        categories = values.map(rule.mapping)
        if rule.default is not None:
            categories = categories.fillna(rule.default)
        uncovered = values[categories.isna()]
        if not uncovered.empty:
            raise UnknownCategoryError(spec.name, uncovered.unique())
    else:
        if rule.values:
            uncovered = values[~values.isin(rule.values)]
            if not uncovered.empty:
                raise UnknownCategoryError(spec.name, uncovered.unique())
        categories = values

    levels = sorted(categories.unique())
    matrix = np.stack([(categories == level).to_numpy(np.uint8) for level in levels], axis=1)
    return [f"{spec.name}={level}" for level in levels], matrix


def load_csv(paths: Path | Sequence[Path], schema: SchemaConfig) -> EncodedDataset:
    """Read one or more files sharing a schema into an EncodedDataset.

    Rows failing schema filters are removed first, then rows with a missing value
    in any kept column (listwise deletion); the counts are logged and recorded.
    """
    paths = [paths] if isinstance(paths, Path) else list(paths)
    if not paths:
        raise DataError("no data files given")

    frames = [_read_frame(p, schema) for p in paths]
    frame = pd.concat(frames, ignore_index=True)
    rows_read = len(frame)

    needed = [c.name for c in schema.kept] + [f.column for f in schema.filters]
    missing = sorted(set(needed) - set(frame.columns))
    if missing:
        raise SchemaError(f"columns missing from {paths[0]}: {', '.join(missing)}")

    for f in schema.filters:
        frame = frame[_filter_mask(frame, f)]
    rows_filtered = rows_read - len(frame)

    kept = frame[[c.name for c in schema.kept]]
    complete = kept.dropna()
    dropped = len(kept) - len(complete)
    log.info(
        "%s: read %d rows, filtered %d, dropped %d with missing values, kept %d",
        schema.name, rows_read, rows_filtered, dropped, len(complete),
    )
    if complete.empty:
        raise EmptyDatasetError(f"no rows left in {schema.name!r} after filtering and deletion")

    names: list[str] = []
    sources: list[str] = []
    blocks: list[np.ndarray] = []
    groups: list[str] = []
    for spec in schema.features:
        feature_names, block = _encode_column(spec, complete[spec.name])
        names += feature_names
        sources += [spec.name] * len(feature_names)
        blocks.append(block)
        if spec.role == "group":
            groups += feature_names

    target_spec = schema.target
    target = complete[target_spec.name].astype(str).str.strip().isin(target_spec.positive)

    return EncodedDataset(
        features=np.concatenate(blocks, axis=1),
        target=target.to_numpy(np.uint8),
        feature_names=tuple(names),
        feature_sources=tuple(sources),
        name=schema.name,
        group_features=tuple(groups),
        provenance=Provenance(
            sources=tuple((str(p), file_digest(p)) for p in paths),
            schema_digest=schema.digest,
            rows_read=rows_read,
            rows_filtered=rows_filtered,
            rows_dropped_missing=dropped,
        ),
    )


# ── Group / target proportions ──────────────────────────────────────


@dataclass(frozen=True)
class GroupTargetTable:
    """Joint proportions ``joint[g][t]`` of group indicator g and target t."""

    group_feature: str
    counts: tuple[tuple[int, int], tuple[int, int]]

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    @property
    def joint(self) -> tuple[tuple[float, float], tuple[float, float]]:
        n = self.total
        (a, b), (c, d) = self.counts
        return (a / n, b / n), (c / n, d / n)

    def group_size(self, g: int) -> int:
        return sum(self.counts[g])

    def target_rate(self, g: int) -> float:
        return self.counts[g][1] / self.group_size(g)


def group_target_table(d: EncodedDataset, group_feature: str) -> GroupTargetTable:
    g = d.column(group_feature).astype(bool)
    if g.all() or not g.any():
        raise DegenerateGroupError(f"group feature {group_feature!r} is constant")
    y = d.target.astype(bool)
    counts = (
        (int((~g & ~y).sum()), int((~g & y).sum())),
        (int((g & ~y).sum()), int((g & y).sum())),
    )
    return GroupTargetTable(group_feature=group_feature, counts=counts)


def group_target_tables(d: EncodedDataset) -> list[GroupTargetTable]:
    """One table per schema group column; constant groups are logged and left out."""
    tables: list[GroupTargetTable] = []
    for feature in d.group_features:
        try:
            tables.append(group_target_table(d, feature))
        except DegenerateGroupError as e:
            log.warning("%s: %s", d.name, e)
    return tables
