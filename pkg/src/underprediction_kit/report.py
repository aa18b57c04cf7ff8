"""JSON reports, CSV tables and run manifests written to the output directory."""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import asdict
from fractions import Fraction
from pathlib import Path
from typing import Any

import pandas as pd

from . import __version__
from .analytic_model import Curve, PvcScenarioResult
from .audit import CELLS, AuditResult, BandCheck, CorrelationReport, compare_to_reference
from .config import RunConfig
from .dataset import GroupTargetTable
from .inference import GeneratingProbabilityTable

log = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    if isinstance(value, Fraction):
        return {"value": float(value), "exact": str(value)}
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_plain(v) for v in value]
    return value


def write_json(path: Path, data: dict[str, Any]) -> Path:
    path.write_text(json.dumps(_plain(data), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    log.info("Wrote %s", path)
    return path


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n")
    log.info("Wrote %s", path)
    return path


def write_manifest(
    config: RunConfig,
    argv: Sequence[str],
    *,
    inputs: Sequence[tuple[str, str]] = (),
    schema_digest: str | None = None,
    dataset_digest: str | None = None,
    outputs: Sequence[Path] = (),
) -> Path:
    """Everything needed to rerun: version, argv, seed, inputs with digests, parameters."""
    manifest: dict[str, Any] = {
        "tool": "underprediction-kit",
        "version": __version__,
        "argv": list(argv),
        "parameters": config.echo(),
        "inputs": [{"path": p, "sha256": digest} for p, digest in inputs],
        "schema_sha256": schema_digest,
        "dataset_sha256": dataset_digest,
        "outputs": sorted(p.name for p in outputs),
    }
    return write_json(config.output_dir / "manifest.json", manifest)


# ── Simulation ──────────────────────────────────────────────────────


def simulation_frame(t: GeneratingProbabilityTable) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "K": [r.k for r in t.rows],
            "Pr": [float(r.proportion) for r in t.rows],
            "P": [r.mean for r in t.rows],
            "RoS": [float(r.succession) for r in t.rows],
            "hits": [r.hits for r in t.rows],
        }
    )


def write_simulation(t: GeneratingProbabilityTable, output_dir: Path) -> list[Path]:
    return [write_csv(output_dir / f"simulate-n{t.n}.csv", simulation_frame(t))]


# ── Analytic model ──────────────────────────────────────────────────


def scenario_document(result: PvcScenarioResult) -> dict[str, Any]:
    s = result.scenario
    groups = {}
    for g in result.groups:
        rounded = result.rounded(g)
        groups[g.label] = {
            "share": g.share,
            "target_rate": g.rate,
            "pvc_count": g.pvc_count,
            "degenerate": g.degenerate,
            "counts": g.counts(),
            "conditional": g.conditional,
            "predicted_rate": g.predicted_rate,
            "joint_actual": g.joint_actual,
            "joint_predicted": g.joint_predicted,
            "relative_fall": g.relative_fall,
            "rounded": asdict(rounded) | {"joint_fall": rounded.joint_fall},
        }
    return {
        "scenario": {
            "total": s.total,
            "minority_share": s.minority_share,
            "majority_rate": s.majority_rate,
            "minority_rate": s.minority_rate,
            "prior": {"a": s.prior.a, "b": s.prior.b},
        },
        "groups": groups,
        "note": (
            "rounded.joint_fall recomputes the fall from two-decimal cells; "
            "relative_fall is the unrounded value"
        ),
    }


def write_curve(curve: Curve, path: Path) -> Path:
    path.write_text(curve.to_csv(), encoding="utf-8")
    log.info("Wrote %s", path)
    return path


# ── Audit ───────────────────────────────────────────────────────────


def correlation_frame(reports: Sequence[CorrelationReport]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "dataset": r.dataset,
                "protocol": r.protocol,
                "variant": r.variant,
                **{cell: r.coefficients[cell] for cell in CELLS},
                "splits": r.n_splits,
                "sides": r.n_sides,
            }
            for r in reports
        ]
    )


def rows_frame(result: AuditResult) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) | {"fall": r.fall} for r in result.rows])


def group_target_document(table: GroupTargetTable) -> dict[str, Any]:
    (j00, j01), (j10, j11) = table.joint
    return {
        "group_feature": table.group_feature,
        "rows": table.total,
        "joint": {
            "group0_target0": j00,
            "group0_target1": j01,
            "group1_target0": j10,
            "group1_target1": j11,
        },
        "group_size": {"group0": table.group_size(0), "group1": table.group_size(1)},
        "target_rate": {"group0": table.target_rate(0), "group1": table.target_rate(1)},
    }


def _band(checks: Sequence[BandCheck]) -> list[dict[str, Any]]:
    return [
        {"cell": c.cell, "value": c.value, "reference": c.reference, "within": c.within}
        for c in checks
    ]


def audit_document(
    result: AuditResult,
    config: RunConfig,
    sweep: Sequence[CorrelationReport] = (),
    group_tables: Sequence[GroupTargetTable] = (),
) -> dict[str, Any]:
    d = result.dataset
    census = result.census
    return {
        "dataset": {
            "name": d.name,
            "rows": d.n_rows,
            "features": d.n_features,
            "target_rate": d.target_rate,
            "sha256": d.digest,
            "sources": [{"path": p, "sha256": h} for p, h in d.provenance.sources],
            "schema_sha256": d.provenance.schema_digest,
            "rows_read": d.provenance.rows_read,
            "rows_filtered": d.provenance.rows_filtered,
            "rows_dropped_missing": d.provenance.rows_dropped_missing,
        },
        "parameters": config.echo(),
        "protocol": result.protocol.descriptor,
        "group_target": [group_target_document(t) for t in group_tables],
        "subsets": {
            "splits": len(result.splits),
            "sides": 2 * len(result.splits),
            "measured_splits": len(result.rows) // 2,
            "skipped": [{"feature": f, "reason": why} for f, why in result.skipped],
        },
        "bias_orientation": "b(D) = (pred - act) / act; fall = -b(D)",
        "correlations": [
            {
                "variant": r.variant,
                "coefficients": r.coefficients,
                "undefined": r.undefined,
                "diff_construction": "(min - maj) predictor vs (min - maj) b(D)",
            }
            for r in result.correlations
        ],
        "reference_band": _band(compare_to_reference(result.headline)),
        "sweep": [
            {
                "protocol": r.protocol,
                "coefficients": r.coefficients,
                "reference_band": _band(compare_to_reference(r)),
            }
            for r in sweep
        ],
        "pvc_census": {
            "pvcs": census.n_pvcs,
            "mass_below_100": census.mass_below_100,
            "exponent": census.exponent,
        },
        "rows": [asdict(r) | {"fall": r.fall} for r in result.rows],
    }


def write_audit(
    result: AuditResult,
    config: RunConfig,
    sweep: Sequence[CorrelationReport] = (),
    group_tables: Sequence[GroupTargetTable] = (),
) -> list[Path]:
    out = config.output_dir
    name = result.dataset.name
    return [
        write_json(
            out / f"{name}-report.json", audit_document(result, config, sweep, group_tables)
        ),
        write_csv(out / f"{name}-rows.csv", rows_frame(result)),
        write_csv(
            out / f"{name}-correlations.csv",
            correlation_frame([*result.correlations, *sweep]),
        ),
    ]
