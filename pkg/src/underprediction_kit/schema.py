"""Declarative dataset schemas: column roles and binning rules, loaded from YAML."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Literal

import yaml

from .errors import SchemaError

log = logging.getLogger(__name__)

Role = Literal["target", "group", "predictor", "drop"]
RuleKind = Literal["categorical", "bins", "merge", "indicator"]

_ROLES = ("target", "group", "predictor", "drop")


@dataclass(frozen=True)
class BinningRule:
    """How one raw column becomes categories (or a single indicator).

    - ``categorical``: identity; ``values`` (optional) restricts what is allowed.
    - ``bins``: numeric, half-open ``[edge_i, edge_i+1)`` intervals named by ``labels``.
    - ``merge``: value → label map, with an optional ``default`` for everything else.
    - ``indicator``: one binary column ``name`` that is 1 for the ``positive`` values.
    """

    kind: RuleKind = "categorical"
    values: tuple[str, ...] = ()
    edges: tuple[float, ...] = ()
    labels: tuple[str, ...] = ()
    mapping: dict[str, str] = field(default_factory=dict)
    default: str | None = None
    name: str | None = None
    positive: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "bins":
            if len(self.edges) < 2 or len(self.labels) != len(self.edges) - 1:
                raise SchemaError("bins need n+1 edges for n labels")
            if any(b <= a for a, b in zip(self.edges, self.edges[1:], strict=False)):
                raise SchemaError("bin edges must be strictly increasing")
        if self.kind == "merge" and not self.mapping:
            raise SchemaError("merge rule needs a non-empty map")
        if self.kind == "indicator" and (not self.name or not self.positive):
            raise SchemaError("indicator rule needs a name and positive values")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: Role
    rule: BinningRule = field(default_factory=BinningRule)
    positive: tuple[str, ...] = ()
    """Target values counted as 1 (target role only)."""


@dataclass(frozen=True)
class RowFilter:
    """Keep rows whose column satisfies every given bound / membership test."""

    column: str
    min: float | None = None
    max: float | None = None
    within: tuple[str, ...] = ()
    not_in: tuple[str, ...] = ()


@dataclass(frozen=True)
class SchemaConfig:
    name: str
    columns: tuple[ColumnSpec, ...]
    missing_marker: str = "?"
    header: bool = True
    names: tuple[str, ...] = ()
    comment: str | None = None
    delimiter: str = ","
    filters: tuple[RowFilter, ...] = ()
    raw: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        targets = [c for c in self.columns if c.role == "target"]
        if len(targets) != 1:
            raise SchemaError(
                f"schema {self.name!r} needs exactly one target, found {len(targets)}"
            )
        if not targets[0].positive:
            raise SchemaError(f"schema {self.name!r}: target needs positive values")
        if not self.header and not self.names:
            raise SchemaError(f"schema {self.name!r}: header-less files need 'names'")

    @property
    def target(self) -> ColumnSpec:
        return next(c for c in self.columns if c.role == "target")

    @property
    def kept(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.role != "drop")

    @property
    def features(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.role in ("group", "predictor"))

    @property
    def digest(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, ensure_ascii=False, default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ── Parsing ─────────────────────────────────────────────────────────


def _strings(raw: Any) -> tuple[str, ...]:
    if raw is None:
        return ()
    if isinstance(raw, list | tuple):
        return tuple(str(v) for v in raw)
    return (str(raw),)


def _edge(value: Any) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", ".inf"):
        return math.inf
    if isinstance(value, str) and value.strip().lower() in ("-inf", "-.inf"):
        return -math.inf
    return float(value)


def _parse_rule(raw: dict[str, Any]) -> BinningRule:
    if "bins" in raw:
        bins = raw["bins"]
        return BinningRule(
            kind="bins",
            edges=tuple(_edge(e) for e in bins["edges"]),
            labels=_strings(bins["labels"]),
        )
    if "merge" in raw:
        merge = raw["merge"]
        mapping: dict[str, str] = {}
        for label, members in (merge.get("groups") or {}).items():
            for member in _strings(members):
                mapping[member] = str(label)
        default = merge.get("default")
        return BinningRule(
            kind="merge", mapping=mapping, default=None if default is None else str(default)
        )
    if "indicator" in raw:
        ind = raw["indicator"]
        return BinningRule(
            kind="indicator", name=str(ind["name"]), positive=_strings(ind["positive"])
        )
    return BinningRule(kind="categorical", values=_strings(raw.get("values")))


def parse_schema(data: dict[str, Any]) -> SchemaConfig:
    if not isinstance(data, dict) or "columns" not in data:
        raise SchemaError("schema must be a mapping with a 'columns' section")

    columns: list[ColumnSpec] = []
    for name, spec in data["columns"].items():
        spec = spec or {}
        role = spec.get("role", "predictor")
        if role not in _ROLES:
            raise SchemaError(f"column {name!r}: unknown role {role!r}")
        try:
            rule = _parse_rule(spec)
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"column {name!r}: bad binning rule: {e}") from e
        columns.append(
            ColumnSpec(
                name=str(name),
                role=role,
                rule=rule,
                positive=_strings(spec.get("positive")) if role == "target" else (),
            )
        )

    filters = tuple(
        RowFilter(
            column=str(f["column"]),
            min=None if f.get("min") is None else float(f["min"]),
            max=None if f.get("max") is None else float(f["max"]),
            within=_strings(f.get("in")),
            not_in=_strings(f.get("not_in")),
        )
        for f in data.get("filters") or []
    )

    return SchemaConfig(
        name=str(data.get("name", "dataset")),
        columns=tuple(columns),
        missing_marker=str(data.get("missing_marker", "?")),
        header=bool(data.get("header", True)),
        names=_strings(data.get("names")),
        comment=data.get("comment"),
        delimiter=str(data.get("delimiter", ",")),
        filters=filters,
        raw=data,
    )


def load_schema(path: Path) -> SchemaConfig:
    """Load a schema file; a bare name ('adult', 'compas') selects a bundled schema."""
    if not path.exists() and path.suffix == "" and str(path) in bundled_schemas():
        bundled = resources.files("underprediction_kit").joinpath("schemas", f"{path}.yaml")
        text = bundled.read_text(encoding="utf-8")
    else:
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError as e:
            raise SchemaError(f"schema file not found: {path}") from e
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise SchemaError(f"schema {path} is not valid YAML: {e}") from e
    schema = parse_schema(data)
    log.debug("Loaded schema %s (%d columns)", schema.name, len(schema.columns))
    return schema


def bundled_schemas() -> list[str]:
    folder = resources.files("underprediction_kit").joinpath("schemas")
    names = (p.name for p in folder.iterdir())
    return sorted(n.removesuffix(".yaml") for n in names if n.endswith(".yaml"))
