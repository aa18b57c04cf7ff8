"""Subset audit: enumerate majority/minority splits, measure tree bias, correlate predictors.

A split partitions the encoded dataset by one binary feature. For each side the
observed bias b(D) = (pred - act) / act of a decision tree is compared with the
predictors built from that side's target rate and leaf-size spread.
"""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import pearsonr
from sklearn.model_selection import StratifiedKFold, train_test_split

from .analytic_model import (
    LeafSizeHistogram,
    exponential_spread,
    exponential_spread_with_target,
    fit_power_law,
    target_plus_spread,
)
from .dataset import EncodedDataset
from .errors import DegenerateFitError, FoldError, UndefinedMetricError
from .inference import observed_bias
from .tree import DecisionTree, LeafStats, TreeParams, leaf_statistics, train

log = logging.getLogger(__name__)

MIN_MINORITY = 100

ProtocolKind = Literal["cv", "train-on-all", "holdout"]
Variant = Literal["literal", "additive"]

CELLS = ("maj_tr", "maj_es_tr", "min_tr", "min_es_tr", "diff_es_tr", "full_tr", "full_es_tr")

#: Published coefficients for the two bundled datasets, keyed by schema name.
REFERENCE_CORRELATIONS: dict[str, dict[str, float]] = {
    "adult": {
        "maj_tr": 0.82, "maj_es_tr": 0.82, "min_tr": 0.49, "min_es_tr": 0.56,
        "diff_es_tr": 0.61, "full_tr": 0.50, "full_es_tr": 0.56,
    },
    "compas": {
        "maj_tr": 0.95, "maj_es_tr": 0.95, "min_tr": 0.86, "min_es_tr": 0.86,
        "diff_es_tr": 0.47, "full_tr": 0.86, "full_es_tr": 0.85,
    },
}
REFERENCE_BAND = 0.20


# ── Splits ──────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class SplitSide:
    label: Literal["maj", "min"]
    value: int
    """Value of the splitting feature on this side."""
    rows: np.ndarray = field(repr=False)
    target_count: int

    @property
    def size(self) -> int:
        return int(self.rows.size)

    @property
    def target_rate(self) -> float:
        return self.target_count / self.size


@dataclass(frozen=True, eq=False)
class SubsetSplit:
    subset_id: int
    feature: str
    majority: SplitSide
    minority: SplitSide

    @property
    def sides(self) -> tuple[SplitSide, SplitSide]:
        return self.majority, self.minority


def enumerate_splits(
    d: EncodedDataset,
    *,
    min_minority: int = MIN_MINORITY,
    exclude: Sequence[str] = (),
) -> list[SubsetSplit]:
    """One candidate split per binary feature, kept when the minority side has at least
    `min_minority` rows and both sides carry a target occurrence.

    A feature that is the exact complement of an earlier one (the second column of a
    two-valued category) describes the same partition and is skipped.
    """
    splits: list[SubsetSplit] = []
    seen: set[bytes] = set()
    y = d.target.astype(bool)
    for name in d.feature_names:
        if name in exclude:
            continue
        column = d.column(name).astype(bool)
        key = column.tobytes()
        if key in seen or (~column).tobytes() in seen:
            continue
        seen.add(key)

        ones = np.flatnonzero(column)
        zeros = np.flatnonzero(~column)
        one_side = SplitSide("min", 1, ones, int(y[ones].sum()))
        zero_side = SplitSide("min", 0, zeros, int(y[zeros].sum()))
        if ones.size <= zeros.size:
            minority, majority = one_side, replace(zero_side, label="maj")
        else:
            minority, majority = zero_side, replace(one_side, label="maj")

        if minority.size < min_minority:
            log.debug("Split %s skipped: minority has %d rows", name, minority.size)
            continue
        if minority.target_count == 0 or majority.target_count == 0:
            log.debug("Split %s skipped: a side has no target occurrences", name)
            continue
        splits.append(SubsetSplit(len(splits), name, majority, minority))

    log.info("%s: %d splits kept (%d sides)", d.name, len(splits), 2 * len(splits))
    return splits


# ── Evaluation protocol ─────────────────────────────────────────────


@dataclass(frozen=True)
class EvaluationProtocol:
    """How predictions relate to the rows a tree was trained on."""

    kind: ProtocolKind = "cv"
    folds: int = 5
    holdout_fraction: float = 0.3
    seed: int = 7
    retrain_per_subset: bool = False
    exclude_split_feature: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("cv", "train-on-all", "holdout"):
            raise ValueError(f"unknown protocol {self.kind!r}")
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError(f"holdout fraction must lie in (0, 1), got {self.holdout_fraction}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @property
    def descriptor(self) -> str:
        if self.kind == "cv":
            base = f"cv-{self.folds}fold-stratified"
        elif self.kind == "holdout":
            base = f"holdout-{self.holdout_fraction:g}-stratified"
        else:
            base = "train-on-all"
        scope = "per-subset" if self.retrain_per_subset else "global"
        extra = ",exclude-split-feature" if self.exclude_split_feature else ""
        return f"{base}({scope}{extra},seed={self.seed})"


@dataclass(frozen=True, eq=False)
class Evaluation:
    predictions: np.ndarray
    scored: np.ndarray
    """Rows that received a prediction under the protocol."""
    trees: tuple[DecisionTree, ...]
    train_rows: tuple[np.ndarray, ...]


def _constant(y: np.ndarray) -> bool:
    return bool(y.min() == y.max())


def _cv_folds(y: np.ndarray, protocol: EvaluationProtocol) -> list[tuple[np.ndarray, np.ndarray]]:
    for seed in (protocol.seed, protocol.seed + 1):
        splitter = StratifiedKFold(n_splits=protocol.folds, shuffle=True, random_state=seed)
        try:
            folds = list(splitter.split(np.zeros(y.size), y))
        except ValueError as e:
            raise FoldError(f"cannot build {protocol.folds} stratified folds: {e}") from e
        if not any(_constant(y[train_rows]) for train_rows, _ in folds):
            return folds
        log.warning("Constant-target training fold under seed %d; reshuffling once", seed)
    raise FoldError("a training fold has a constant target after one reshuffle")


def _holdout(y: np.ndarray, protocol: EvaluationProtocol) -> tuple[np.ndarray, np.ndarray]:
    try:
        train_rows, test_rows = train_test_split(
            np.arange(y.size),
            test_size=protocol.holdout_fraction,
            stratify=y,
            random_state=protocol.seed,
        )
    except ValueError as e:
        raise FoldError(f"cannot build a stratified holdout: {e}") from e
    if _constant(y[train_rows]):
        raise FoldError("holdout training partition has a constant target")
    return np.sort(train_rows), np.sort(test_rows)


def evaluate(
    d: EncodedDataset,
    params: TreeParams,
    protocol: EvaluationProtocol,
    *,
    workers: int = 1,
) -> Evaluation:
    """Train the protocol's trees on `d` and collect a prediction per scored row."""
    n = d.n_rows
    predictions = np.zeros(n, dtype=np.uint8)
    scored = np.zeros(n, dtype=bool)

    if protocol.kind == "train-on-all":
        tree = train(d, params)
        predictions[:] = tree.predict_many(d.features)
        scored[:] = True
        return Evaluation(predictions, scored, (tree,), (np.arange(n),))

    if protocol.kind == "holdout":
        train_rows, test_rows = _holdout(d.target, protocol)
        tree = train(d, params, rows=train_rows)
        predictions[test_rows] = tree.predict_many(d.features[test_rows])
        scored[test_rows] = True
        return Evaluation(predictions, scored, (tree,), (train_rows,))

    folds = _cv_folds(d.target, protocol)
    trees = Parallel(n_jobs=workers, prefer="threads")(
        delayed(train)(d, params, rows=train_rows) for train_rows, _ in folds
    )
    hits = np.zeros(n, dtype=np.int64)
    for tree, (_, test_rows) in zip(trees, folds, strict=True):
        predictions[test_rows] = tree.predict_many(d.features[test_rows])
        hits[test_rows] += 1
    # out-of-fold totality
    if not np.all(hits == 1):
        raise FoldError("cross-validation did not score every row exactly once")
    scored[:] = True
    return Evaluation(predictions, scored, tuple(trees), tuple(train for train, _ in folds))


# ── Predictors and bias ─────────────────────────────────────────────


@dataclass(frozen=True)
class Predictors:
    tr: float
    es: float
    es_tr: float
    """Target rate added inside every spread term."""
    tr_plus_es: float
    histogram_digest: str


def histogram_digest(h: LeafSizeHistogram) -> str:
    text = ";".join(f"{size}:{p!r}" for size, p in h.entries)
    return hashlib.sha256(text.encode("ascii")).hexdigest()[:16]


def compute_predictors(
    stats: Sequence[LeafStats], target_rate: float, *, group: int = 1
) -> Predictors:
    """Tr, ES, ES+Tr and Tr+ES for a side, from its member counts across the given trees."""
    sizes = [size for s in stats for size in s.group_sizes(group)]
    h = LeafSizeHistogram.from_sizes(sizes)
    return Predictors(
        tr=target_rate,
        es=exponential_spread(h),
        es_tr=exponential_spread_with_target(h, target_rate),
        tr_plus_es=target_plus_spread(h, target_rate),
        histogram_digest=histogram_digest(h),
    )


@dataclass(frozen=True)
class AuditRow:
    subset_id: int
    feature: str
    side: Literal["maj", "min"]
    size: int
    actual_rate: float
    predicted_rate: float
    bias: float
    """(pred - act) / act; negative means underprediction."""
    tr: float
    es: float
    es_tr: float
    tr_plus_es: float
    histogram_digest: str

    def __post_init__(self) -> None:
        if not np.isfinite(self.bias):
            raise ValueError(f"bias must be finite for subset {self.subset_id}")

    @property
    def fall(self) -> float:
        """Relative fall (act - pred) / act, positive when underpredicted."""
        return -self.bias

    def predictor(self, variant: Variant = "literal") -> float:
        return self.es_tr if variant == "literal" else self.tr_plus_es


def _source_siblings(d: EncodedDataset, feature: str) -> list[str]:
    if not d.feature_sources:
        return [feature]
    source = d.feature_sources[d.feature_index(feature)]
    return [n for n, s in zip(d.feature_names, d.feature_sources, strict=True) if s == source]


def _side_row(
    split: SubsetSplit,
    side: SplitSide,
    d: EncodedDataset,
    rows: np.ndarray,
    ev: Evaluation,
) -> AuditRow:
    """Measure one side given the evaluation that covers it; `rows` index into `d`."""
    scored = rows[ev.scored[rows]]
    if scored.size == 0:
        raise UndefinedMetricError(f"split {split.feature!r}: {side.label} side has no scored rows")
    act = float(d.target[scored].mean())
    pred = float(ev.predictions[scored].mean())
    bias = float(observed_bias(pred, act))

    membership = np.zeros(d.n_rows, dtype=bool)
    membership[rows] = True
    stats = [
        leaf_statistics(tree, d, split.feature, rows=train_rows, membership=membership)
        for tree, train_rows in zip(ev.trees, ev.train_rows, strict=True)
    ]
    p = compute_predictors(stats, side.target_rate)
    return AuditRow(
        subset_id=split.subset_id,
        feature=split.feature,
        side=side.label,
        size=side.size,
        actual_rate=act,
        predicted_rate=pred,
        bias=bias,
        tr=p.tr,
        es=p.es,
        es_tr=p.es_tr,
        tr_plus_es=p.tr_plus_es,
        histogram_digest=p.histogram_digest,
    )


def measure_bias(
    d: EncodedDataset,
    split: SubsetSplit,
    params: TreeParams,
    protocol: EvaluationProtocol,
    *,
    evaluation: Evaluation | None = None,
) -> tuple[AuditRow, AuditRow]:
    """(majority row, minority row) for one split.

    By default one model over the whole dataset scores both sides; with
    ``retrain_per_subset`` each side gets its own model trained on its rows only.
    A precomputed `evaluation` must cover `d` as given (after any feature exclusion).
    """
    base = d.without_features(_source_siblings(d, split.feature)) if (
        protocol.exclude_split_feature
    ) else d

    if protocol.retrain_per_subset:
        out = []
        for side in split.sides:
            side_data = base.subset(side.rows)
            ev = evaluate(side_data, params, protocol)
            out.append(_side_row(split, side, side_data, np.arange(side.size), ev))
        return out[0], out[1]

    ev = evaluation or evaluate(base, params, protocol)
    return (
        _side_row(split, split.majority, base, split.majority.rows, ev),
        _side_row(split, split.minority, base, split.minority.rows, ev),
    )


# ── Correlation ─────────────────────────────────────────────────────


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson r, or None when fewer than 3 points or either side has zero variance."""
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if a.size != b.size:
        raise ValueError("correlation needs equal-length vectors")
    if a.size < 3 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return None
    r, _ = pearsonr(a, b)
    return float(np.clip(r, -1.0, 1.0))


@dataclass(frozen=True)
class CorrelationReport:
    dataset: str
    protocol: str
    variant: Variant
    coefficients: dict[str, float | None]
    n_splits: int

    @property
    def n_sides(self) -> int:
        return 2 * self.n_splits

    @property
    def undefined(self) -> list[str]:
        return [cell for cell, r in self.coefficients.items() if r is None]


def correlate(
    rows: Sequence[AuditRow],
    *,
    dataset: str = "",
    protocol: str = "",
    variant: Variant = "literal",
) -> CorrelationReport:
    """Pearson coefficients of each predictor against observed bias, in seven cells.

    Diff pairs the two sides of each split: (min - maj) predictor against (min - maj) bias.
    """
    maj = sorted((r for r in rows if r.side == "maj"), key=lambda r: r.subset_id)
    mino = sorted((r for r in rows if r.side == "min"), key=lambda r: r.subset_id)
    pairs = [(a, b) for a in maj for b in mino if a.subset_id == b.subset_id]
    full = sorted(rows, key=lambda r: (r.subset_id, r.side != "maj"))

    coefficients = {
        "maj_tr": pearson([r.tr for r in maj], [r.bias for r in maj]),
        "maj_es_tr": pearson([r.predictor(variant) for r in maj], [r.bias for r in maj]),
        "min_tr": pearson([r.tr for r in mino], [r.bias for r in mino]),
        "min_es_tr": pearson([r.predictor(variant) for r in mino], [r.bias for r in mino]),
        "diff_es_tr": pearson(
            [b.predictor(variant) - a.predictor(variant) for a, b in pairs],
            [b.bias - a.bias for a, b in pairs],
        ),
        "full_tr": pearson([r.tr for r in full], [r.bias for r in full]),
        "full_es_tr": pearson([r.predictor(variant) for r in full], [r.bias for r in full]),
    }
    report = CorrelationReport(dataset, protocol, variant, coefficients, len(pairs))
    for cell in report.undefined:
        log.warning("%s: correlation %s is undefined (zero variance or < 3 rows)", dataset, cell)
    return report


@dataclass(frozen=True)
class BandCheck:
    cell: str
    value: float | None
    reference: float

    @property
    def within(self) -> bool:
        return self.value is not None and abs(self.value - self.reference) <= REFERENCE_BAND


def compare_to_reference(report: CorrelationReport) -> list[BandCheck]:
    """Band checks against the published values, empty for datasets without any."""
    reference = REFERENCE_CORRELATIONS.get(report.dataset)
    if reference is None:
        return []
    checks = [BandCheck(cell, report.coefficients[cell], reference[cell]) for cell in CELLS]
    for c in checks:
        if not c.within:
            log.warning(
                "%s %s = %s is outside %.2f ± %.2f",
                report.dataset, c.cell, c.value, c.reference, REFERENCE_BAND,
            )
    return checks


# ── PVC census ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class PvcCensus:
    histogram: LeafSizeHistogram
    n_pvcs: int
    mass_below_100: float
    exponent: float | None
    """Fitted power-law exponent of the PVC sizes; None when the fit is degenerate."""


def pvc_size_census(d: EncodedDataset) -> PvcCensus:
    """Group rows by their full feature vector and histogram the group sizes."""
    _, counts = np.unique(d.features, axis=0, return_counts=True)
    sizes = [int(c) for c in counts]
    h = LeafSizeHistogram.from_sizes(sizes)
    try:
        exponent: float | None = fit_power_law(sizes)
    except DegenerateFitError as e:
        log.warning("%s: %s", d.name, e)
        exponent = None
    census = PvcCensus(h, len(sizes), h.mass_below(100), exponent)
    log.info(
        "%s: %d PVCs, %.1f%% of rows in PVCs smaller than 100",
        d.name, census.n_pvcs, 100 * census.mass_below_100,
    )
    return census


# ── Orchestration ───────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class AuditResult:
    dataset: EncodedDataset
    params: TreeParams
    protocol: EvaluationProtocol
    splits: tuple[SubsetSplit, ...]
    rows: tuple[AuditRow, ...]
    skipped: tuple[tuple[str, str], ...]
    """(feature, reason) for splits whose bias could not be measured."""
    correlations: tuple[CorrelationReport, CorrelationReport]
    """Literal ES+Tr first, additive Tr+ES second."""
    census: PvcCensus

    @property
    def headline(self) -> CorrelationReport:
        return self.correlations[0]


class Auditor:
    """Runs enumerate → measure → correlate over one encoded dataset."""

    def __init__(
        self,
        d: EncodedDataset,
        params: TreeParams | None = None,
        protocol: EvaluationProtocol | None = None,
        *,
        min_minority: int = MIN_MINORITY,
        workers: int = 1,
    ) -> None:
        self.d = d
        self.params = params or TreeParams()
        self.protocol = protocol or EvaluationProtocol()
        self.min_minority = min_minority
        self.workers = workers

    def _measure(
        self, split: SubsetSplit, evaluation: Evaluation | None
    ) -> tuple[AuditRow, AuditRow] | str:
        try:
            return measure_bias(self.d, split, self.params, self.protocol, evaluation=evaluation)
        except (UndefinedMetricError, FoldError) as e:
            log.warning("Split %s skipped: %s", split.feature, e)
            return str(e)

    def run(self) -> AuditResult:
        splits = enumerate_splits(self.d, min_minority=self.min_minority)
        protocol = self.protocol
        shared: Evaluation | None = None
        if not protocol.retrain_per_subset and not protocol.exclude_split_feature:
            shared = evaluate(self.d, self.params, protocol, workers=self.workers)

        results = Parallel(n_jobs=self.workers, prefer="threads")(
            delayed(self._measure)(s, shared) for s in splits
        )
        rows: list[AuditRow] = []
        skipped: list[tuple[str, str]] = []
        for split, result in zip(splits, results, strict=True):
            if isinstance(result, str):
                skipped.append((split.feature, result))
            else:
                rows += result

        descriptor = protocol.descriptor
        literal = correlate(rows, dataset=self.d.name, protocol=descriptor, variant="literal")
        additive = correlate(rows, dataset=self.d.name, protocol=descriptor, variant="additive")
        return AuditResult(
            dataset=self.d,
            params=self.params,
            protocol=protocol,
            splits=tuple(splits),
            rows=tuple(rows),
            skipped=tuple(skipped),
            correlations=(literal, additive),
            census=pvc_size_census(self.d),
        )


def protocol_variants(base: EvaluationProtocol) -> list[EvaluationProtocol]:
    """cv / train-on-all / holdout, each with per-subset retraining off and on."""
    kinds: tuple[ProtocolKind, ...] = ("cv", "train-on-all", "holdout")
    return [
        replace(base, kind=kind, retrain_per_subset=retrain)
        for kind in kinds
        for retrain in (False, True)
    ]


def sweep_protocols(
    d: EncodedDataset,
    params: TreeParams,
    base: EvaluationProtocol,
    *,
    min_minority: int = MIN_MINORITY,
    workers: int = 1,
) -> list[CorrelationReport]:
    """Headline correlation report under every protocol variant."""
    reports = []
    for protocol in protocol_variants(base):
        log.info("Sweep: %s", protocol.descriptor)
        result = Auditor(d, params, protocol, min_minority=min_minority, workers=workers).run()
        reports.append(result.headline)
    return reports
