"""Analytic models of prediction bias over similarity subsets (PVCs / tree leaves).

Covers the single-PVC scenario, exponential spread, the power-law aggregation of
per-leaf bias, the decision-threshold binomial model, underprediction curves and
a discrete power-law exponent fit.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Literal

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import binom

from .errors import DegenerateFitError, SingularRatioError
from .inference import (
    UNIFORM_PRIOR,
    BetaPrior,
    GroupRates,
    Probability,
    SampleCount,
    beta_posterior_mean,
    underprediction_metric,
)

log = logging.getLogger(__name__)

DEFAULT_EXPONENTS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
DEFAULT_QUALITIES = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

TieRule = Literal["strict", "half"]


def nearest_size(x: float) -> int:
    """Round a fractional sub-leaf size half-up to an integer, floored at 0."""
    return max(0, math.floor(x + 0.5))


def round_half_up(x: float, places: int = 2) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(x))).quantize(quantum, rounding=ROUND_HALF_UP))


# ── Single-PVC scenario ───────────────────────────────────────────


@dataclass(frozen=True)
class PvcScenario:
    """A sample of `total` rows split into majority/minority, with one perfect-predictor PVC.

    The PVC occurs exactly with the target: within each group it covers the
    group's target rate (S1 for the majority, S2 for the minority).
    """

    total: int
    minority_share: float
    majority_rate: float
    minority_rate: float
    prior: BetaPrior = UNIFORM_PRIOR

    def __post_init__(self) -> None:
        if self.total < 1:
            raise ValueError(f"total N must be >= 1, got {self.total}")
        if not 0 < self.minority_share < 1:
            raise ValueError(f"minority share R must lie in (0, 1), got {self.minority_share}")
        for name in ("majority_rate", "minority_rate"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @property
    def majority_share(self) -> float:
        return 1 - self.minority_share

    @property
    def majority_count(self) -> int:
        return nearest_size(self.total * self.majority_share)

    @property
    def minority_count(self) -> int:
        return self.total - self.majority_count

    @property
    def majority_pvc_count(self) -> int:
        return nearest_size(self.majority_count * self.majority_rate)

    @property
    def minority_pvc_count(self) -> int:
        return nearest_size(self.minority_count * self.minority_rate)


@dataclass(frozen=True)
class GroupPrediction:
    label: str
    size: int
    """Rows of the group; the two groups of a scenario partition N."""
    share: float
    rate: float
    """Actual within-group target (and PVC) rate."""
    pvc_count: int
    conditional: Probability
    """P(T=1 | X=1, G) inferred from the group's PVC counts."""
    degenerate: bool = False

    @property
    def predicted_rate(self) -> float:
        return float(self.conditional) * self.rate

    @property
    def joint_actual(self) -> float:
        return self.rate * self.share

    @property
    def joint_predicted(self) -> float:
        return self.predicted_rate * self.share

    @property
    def relative_fall(self) -> float | None:
        """None when the group has no positives to fall from."""
        if self.rate == 0:
            return None
        rates = GroupRates(self.label, actual=self.rate, predicted=self.predicted_rate)
        return float(underprediction_metric(rates))

    def counts(self) -> dict[str, int]:
        """Counts of the (Target, X) cells for this group."""
        return {
            "target0_x0": self.size - self.pvc_count,
            "target0_x1": 0,
            "target1_x0": 0,
            "target1_x1": self.pvc_count,
        }


@dataclass(frozen=True)
class RoundedCells:
    """Two-decimal rendering: conditionals rounded before use, cells rounded half-up."""

    conditional: float
    predicted_rate: float
    target0: float
    target1: float
    actual_target1: float

    @property
    def joint_fall(self) -> float | None:
        if self.actual_target1 == 0:
            return None
        return (self.actual_target1 - self.target1) / self.actual_target1


@dataclass(frozen=True)
class PvcScenarioResult:
    scenario: PvcScenario
    majority: GroupPrediction
    minority: GroupPrediction

    @property
    def groups(self) -> tuple[GroupPrediction, GroupPrediction]:
        return self.majority, self.minority

    def rounded(self, group: GroupPrediction) -> RoundedCells:
        conditional = round_half_up(float(group.conditional))
        predicted_rate = conditional * group.rate
        joint = predicted_rate * group.share
        return RoundedCells(
            conditional=conditional,
            predicted_rate=predicted_rate,
            target0=round_half_up(group.share - joint),
            target1=round_half_up(joint),
            actual_target1=round_half_up(group.joint_actual),
        )


def _group_prediction(
    label: str, size: int, share: float, rate: float, pvc_count: int, prior: BetaPrior
) -> GroupPrediction:
    if pvc_count == 0:
        log.warning("Group %s has no PVC occurrences; using the prior mean", label)
    conditional = beta_posterior_mean(prior, SampleCount(pvc_count, pvc_count))
    return GroupPrediction(
        label=label,
        size=size,
        share=share,
        rate=rate,
        pvc_count=pvc_count,
        conditional=conditional,
        degenerate=pvc_count == 0,
    )


def single_pvc_scenario(s: PvcScenario) -> PvcScenarioResult:
    return PvcScenarioResult(
        scenario=s,
        majority=_group_prediction(
            "maj",
            s.majority_count,
            s.majority_share,
            s.majority_rate,
            s.majority_pvc_count,
            s.prior,
        ),
        minority=_group_prediction(
            "min",
            s.minority_count,
            s.minority_share,
            s.minority_rate,
            s.minority_pvc_count,
            s.prior,
        ),
    )


# ── Leaf-size distributions ───────────────────────────────────────


@dataclass(frozen=True)
class LeafSizeHistogram:
    """(size i, proportion p_i of the population held in subsets of size i)."""

    entries: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("histogram must not be empty")
        sizes = [size for size, _ in self.entries]
        if any(size < 1 for size in sizes) or len(set(sizes)) != len(sizes):
            raise ValueError("histogram sizes must be positive and unique")
        if any(not 0 <= p <= 1 for _, p in self.entries):
            raise ValueError("histogram proportions must lie in [0, 1]")
        total = math.fsum(p for _, p in self.entries)
        if abs(total - 1) > 1e-9:
            raise ValueError(f"histogram proportions must sum to 1, got {total}")

    @classmethod
    def from_sizes(cls, sizes: Iterable[int]) -> LeafSizeHistogram:
        """Build from a list of subset sizes (one entry per leaf / PVC); zeros are skipped."""
        counts = Counter(int(s) for s in sizes if s > 0)
        population = sum(size * n for size, n in counts.items())
        if population == 0:
            raise ValueError("histogram needs at least one non-empty subset")
        return cls(
            tuple((size, size * n / population) for size, n in sorted(counts.items()))
        )

    def mass_below(self, size: int) -> float:
        return math.fsum(p for i, p in self.entries if i < size)


@dataclass(frozen=True, eq=False)
class LeafSizeDistribution:
    """Normalised power-law weights 1/F^X over integer leaf sizes F = 1..max_size."""

    exponent: float
    max_size: int
    sizes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def power_law(
        cls, exponent: float, max_size: int, *, odd_only: bool = False
    ) -> LeafSizeDistribution:
        if exponent <= 0:
            raise ValueError(f"exponent must be positive, got {exponent}")
        if max_size < 1:
            raise ValueError(f"max size must be >= 1, got {max_size}")
        sizes = np.arange(1, max_size + 1)
        if odd_only:
            sizes = sizes[sizes % 2 == 1]
        raw = np.power(sizes.astype(float), -exponent)
        return cls(exponent, max_size, sizes, raw / raw.sum())

    def expectation(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def exponential_spread(h: LeafSizeHistogram) -> float:
    return math.fsum(p / i for i, p in h.entries)


def exponential_spread_with_target(h: LeafSizeHistogram, target_rate: float) -> float:
    """Sum over sizes of (p_i + Tr) / i: the target rate is added inside every term."""
    if not 0 <= target_rate <= 1:
        raise ValueError(f"target rate must lie in [0, 1], got {target_rate}")
    return math.fsum((p + target_rate) / i for i, p in h.entries)


def target_plus_spread(h: LeafSizeHistogram, target_rate: float) -> float:
    """Additive variant: Tr + ES."""
    return target_rate + exponential_spread(h)


# ── Per-leaf bias and its aggregation ─────────────────────────────


def leaf_inferred_probability(
    quality: float, size: int, prior: BetaPrior = UNIFORM_PRIOR
) -> float:
    """(S·F + a) / (F + 2a) for a symmetric prior; a size-0 leaf gives the prior mean."""
    if not prior.is_symmetric:
        raise ValueError("leaf inference needs a symmetric prior (a = b)")
    if not 0 <= quality <= 1:
        raise ValueError(f"leaf quality S must lie in [0, 1], got {quality}")
    if size < 0:
        raise ValueError(f"leaf size must be non-negative, got {size}")
    a = float(prior.a)
    return (quality * size + a) / (size + 2 * a)


def _deviation(quality: float, size: int) -> float:
    return leaf_inferred_probability(quality, size) - quality


def bias_ratio(
    size: int, minority_share: float, majority_rate: float, minority_rate: float
) -> float:
    """Minority over majority deviation of the inferred leaf probability from the sample."""
    minority_size = nearest_size(size * minority_share)
    majority_size = nearest_size(size * (1 - minority_share))
    denominator = _deviation(majority_rate, majority_size)
    if denominator == 0:
        raise SingularRatioError(
            f"majority deviation vanishes at F={size} (S1={majority_rate}); ratio undefined"
        )
    return _deviation(minority_rate, minority_size) / denominator


def aggregate_bias(
    d: LeafSizeDistribution, minority_share: float, majority_rate: float, minority_rate: float
) -> float:
    """Power-law weighted sum of bias_ratio over F = 1..N."""
    ratios = np.array(
        [bias_ratio(int(f), minority_share, majority_rate, minority_rate) for f in d.sizes]
    )
    return d.expectation(ratios)


# ── Underprediction curves ────────────────────────────────────────


@dataclass(frozen=True)
class Curve:
    x_label: str
    y_label: str
    points: tuple[tuple[float, float], ...]

    def to_csv(self) -> str:
        lines = [f"{self.x_label},{self.y_label}"]
        lines += [f"{x!r},{y!r}" for x, y in self.points]
        return "\n".join(lines) + "\n"


def group_underprediction(
    d: LeafSizeDistribution,
    quality: float,
    group_fraction: float,
    prior: BetaPrior = UNIFORM_PRIOR,
) -> float:
    """(S - E[predicted]) / S where a leaf of size F holds ceil(F·g) group members."""
    if not 0 < group_fraction <= 1:
        raise ValueError(f"group fraction must lie in (0, 1], got {group_fraction}")
    group_sizes = np.ceil(d.sizes * group_fraction).astype(int)
    inferred = np.array([leaf_inferred_probability(quality, int(f), prior) for f in group_sizes])
    if quality == 0:
        return 0.0
    expected = d.expectation(inferred)
    return (quality - expected) / quality


def group_underprediction_curve(
    *,
    max_size: int,
    group_fraction: float,
    sweep: Literal["exponent", "quality"] = "exponent",
    exponents: Sequence[float] = DEFAULT_EXPONENTS,
    qualities: Sequence[float] = DEFAULT_QUALITIES,
    quality: float = 0.9,
    exponent: float = 2.0,
    prior: BetaPrior = UNIFORM_PRIOR,
) -> Curve:
    """Underprediction swept over exponent X (fixed S) or over leaf quality S (fixed X)."""
    if sweep == "exponent":
        points = tuple(
            (x, group_underprediction(
                LeafSizeDistribution.power_law(x, max_size), quality, group_fraction, prior
            ))
            for x in exponents
        )
        return Curve("exponent", "underprediction", points)
    d = LeafSizeDistribution.power_law(exponent, max_size)
    points = tuple((s, group_underprediction(d, s, group_fraction, prior)) for s in qualities)
    return Curve("quality", "underprediction", points)


# ── Decision-threshold model ──────────────────────────────────────


def _threshold_rates(sizes: np.ndarray, p: float, tie_rule: TieRule) -> np.ndarray:
    rates = np.asarray(binom.sf(sizes // 2, sizes, p), dtype=float)
    if tie_rule == "half":
        even = sizes % 2 == 0
        rates[even] += 0.5 * binom.pmf(sizes[even] // 2, sizes[even], p)
    # P(more than half of one trial) is p itself
    rates[sizes == 1] = p
    return rates


def threshold_predicted_rate(size: int, p: float, tie_rule: TieRule = "strict") -> float:
    """P(more than half of `size` Bernoulli(p) trials succeed).

    With ``tie_rule="half"`` an exact-half outcome counts one half.
    """
    if size < 1:
        raise ValueError(f"leaf size must be >= 1, got {size}")
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return float(_threshold_rates(np.array([size]), p, tie_rule)[0])


def threshold_group_rate(d: LeafSizeDistribution, p: float, tie_rule: TieRule = "strict") -> float:
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return d.expectation(_threshold_rates(d.sizes, p, tie_rule))


def threshold_curve(
    p: float,
    max_size: int,
    exponents: Sequence[float] = DEFAULT_EXPONENTS,
    *,
    odd_only: bool = False,
    tie_rule: TieRule = "strict",
) -> Curve:
    points = tuple(
        (x, threshold_group_rate(
            LeafSizeDistribution.power_law(x, max_size, odd_only=odd_only), p, tie_rule
        ))
        for x in exponents
    )
    return Curve("exponent", "predicted_rate", points)


# ── Power-law fit ─────────────────────────────────────────────────


def _truncated_zeta(exponent: float, upper: int) -> float:
    return float(np.power(np.arange(1, upper + 1, dtype=float), -exponent).sum())


def fit_power_law(sizes: Sequence[int], *, bounds: tuple[float, float] = (0.01, 10.0)) -> float:
    """Discrete maximum-likelihood exponent, x_min = 1, truncated at the largest size."""
    values = np.asarray(sizes, dtype=float)
    if values.size == 0 or np.any(values < 1):
        raise ValueError("sizes must be positive integers")
    if np.unique(values).size < 2:
        raise DegenerateFitError("power-law fit needs at least two distinct sizes")

    n = values.size
    upper = int(values.max())
    log_sum = float(np.log(values).sum())

    def negative_log_likelihood(x: float) -> float:
        return x * log_sum + n * math.log(_truncated_zeta(x, upper))

    result = minimize_scalar(
        negative_log_likelihood, bounds=bounds, method="bounded", options={"xatol": 1e-6}
    )
    log.debug("Power-law fit over %d sizes (max %d): X=%.4f", n, upper, result.x)
    return float(result.x)


def sample_power_law_sizes(
    exponent: float, max_size: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw `count` sizes from the normalised power law on 1..max_size."""
    d = LeafSizeDistribution.power_law(exponent, max_size)
    return rng.choice(d.sizes, size=count, p=d.weights)
