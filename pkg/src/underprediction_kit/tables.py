"""Plain-text tables for stdout."""

from __future__ import annotations

from collections.abc import Sequence
from fractions import Fraction

from .analytic_model import PvcScenarioResult
from .audit import CELLS, REFERENCE_CORRELATIONS, AuditResult, CorrelationReport, PvcCensus
from .dataset import GroupTargetTable
from .inference import GeneratingProbabilityTable

Cell = str | int | float | Fraction | None


def format_cell(value: Cell, digits: int = 4) -> str:
    if value is None:
        return "undef"
    if isinstance(value, Fraction):
        return f"{float(value):.{digits}f}"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def _percent(value: float | None, digits: int) -> str:
    return "undef" if value is None else f"{100 * value:.{digits}f}%"


def format_table(
    headers: Sequence[str],
    rows: Sequence[Sequence[Cell]],
    *,
    title: str | None = None,
    digits: int = 4,
) -> str:
    """Right-aligned columns under a header rule; the first column is left-aligned."""
    body = [[format_cell(v, digits) for v in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in body:
        if len(row) != len(headers):
            raise ValueError(f"row has {len(row)} cells, expected {len(headers)}")
        widths = [max(w, len(c)) for w, c in zip(widths, row, strict=True)]

    def line(cells: Sequence[str]) -> str:
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:], strict=True)]
        return "  ".join([first, *rest]).rstrip()

    out = []
    if title:
        out.append(title)
    out.append(line(list(headers)))
    out.append("─" * len(out[-1]))
    out += [line(row) for row in body]
    return "\n".join(out) + "\n"


# ── Simulation ──────────────────────────────────────────────────────


def simulation_table(t: GeneratingProbabilityTable) -> str:
    rows = [(r.k, r.proportion, r.mean, r.succession, r.hits) for r in t.rows]
    return format_table(
        ["K", "Pr", "P", "RoS", "hits"],
        rows,
        title=f"N={t.n}  iterations={t.iterations}  seed={t.seed}",
    )


# ── Single-PVC scenario ─────────────────────────────────────────────


def scenario_tables(result: PvcScenarioResult) -> str:
    s = result.scenario
    count_rows: list[list[Cell]] = []
    for g in result.groups:
        c = g.counts()
        count_rows.append([f"{g.label} Target=1", c["target1_x0"], c["target1_x1"]])
        count_rows.append([f"{g.label} Target=0", c["target0_x0"], c["target0_x1"]])
    counts = format_table(
        ["", "X=0", "X=1"],
        count_rows,
        title=f"Counts  N={s.total}  R={s.minority_share:g}  S1={s.majority_rate:g}  "
        f"S2={s.minority_rate:g}",
    )

    conditional = format_table(
        ["group", "PVC count", "P(T=1|X=1)", "exact", "predicted rate", "fall"],
        [
            (
                g.label,
                g.pvc_count,
                float(g.conditional),
                str(g.conditional),
                g.predicted_rate,
                _percent(g.relative_fall, 1),
            )
            for g in result.groups
        ],
        title="Inferred conditionals",
    )

    maj, mino = result.rounded(result.majority), result.rounded(result.minority)
    rounded = format_table(
        ["", "Maj", "Min"],
        [
            ("P(T=1|X=1)", maj.conditional, mino.conditional),
            ("predicted rate", maj.predicted_rate, mino.predicted_rate),
            ("Target=0", maj.target0, mino.target0),
            ("Target=1", maj.target1, mino.target1),
            ("actual Target=1", maj.actual_target1, mino.actual_target1),
            ("fall", _percent(maj.joint_fall, 2), _percent(mino.joint_fall, 2)),
        ],
        title="Predicted proportions (two-decimal rounding)",
        digits=3,
    )
    return "\n".join([counts, conditional, rounded])


# ── Audit ───────────────────────────────────────────────────────────


def correlation_table(reports: Sequence[CorrelationReport]) -> str:
    rows: list[list[Cell]] = []
    for r in reports:
        rows.append([f"{r.dataset} [{r.variant}]", *(r.coefficients[c] for c in CELLS), r.n_splits])
        reference = REFERENCE_CORRELATIONS.get(r.dataset)
        if reference is not None and r.variant == "literal":
            rows.append([f"{r.dataset} published", *(reference[c] for c in CELLS), None])
    headers = ["data", "Maj Tr", "Maj ES+Tr", "Min Tr", "Min ES+Tr", "Diff ES+Tr",
               "Full Tr", "Full ES+Tr", "splits"]
    title = f"Correlation with observed bias  ({reports[0].protocol})" if reports else None
    return format_table(headers, rows, title=title, digits=2)


def audit_rows_table(result: AuditResult) -> str:
    rows = [
        (r.feature, r.side, r.size, r.actual_rate, r.predicted_rate, r.bias,
         f"{100 * r.fall:.1f}%", r.es, r.es_tr)
        for r in result.rows
    ]
    return format_table(
        ["split", "side", "n", "act", "pred", "b(D)", "fall", "ES", "ES+Tr"],
        rows,
        title=f"{result.dataset.name}: {len(result.splits)} splits, {len(result.rows)} sides",
        digits=3,
    )


def group_target_text(table: GroupTargetTable) -> str:
    g = table.group_feature
    rows = [
        (f"{g}={i}", *table.joint[i], table.group_size(i), table.target_rate(i)) for i in (0, 1)
    ]
    return format_table(
        ["group", "Target=0", "Target=1", "n", "target rate"],
        rows,
        title=f"Joint proportions of {g} and target  N={table.total}",
        digits=3,
    )


def census_line(census: PvcCensus) -> str:
    exponent = "undef" if census.exponent is None else f"{census.exponent:.3f}"
    return (
        f"PVCs: {census.n_pvcs}  mass in sizes < 100: {100 * census.mass_below_100:.1f}%  "
        f"fitted exponent: {exponent}\n"
    )
