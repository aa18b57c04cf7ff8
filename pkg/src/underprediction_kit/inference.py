"""Small-sample inference: sample proportion, rule of succession, Beta posterior mean.

Also the Monte Carlo estimate of the mean generating probability behind each
observed count, and the group-level underprediction metric.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational

import numpy as np
from joblib import Parallel, delayed

from .errors import UndefinedMetricError, UndefinedProportionError

log = logging.getLogger(__name__)

Probability = float | Fraction
PseudoCount = int | float | Fraction

#: Uniform draws per Monte Carlo shard. Fixed so the shard layout, and therefore
#: the output, depends only on (N, iterations, seed) and never on worker count.
SHARD_DRAWS = 2_000_000


@dataclass(frozen=True)
class SampleCount:
    """K successes observed among N trials."""

    successes: int
    trials: int

    def __post_init__(self) -> None:
        if self.successes < 0 or self.trials < 0:
            raise ValueError(f"counts must be non-negative: K={self.successes}, N={self.trials}")
        if self.successes > self.trials:
            raise ValueError(f"K={self.successes} exceeds N={self.trials}")


@dataclass(frozen=True)
class BetaPrior:
    """Beta(a, b) prior pseudo-counts."""

    a: PseudoCount = 1
    b: PseudoCount = 1

    def __post_init__(self) -> None:
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"Beta pseudo-counts must be positive: a={self.a}, b={self.b}")

    @property
    def is_exact(self) -> bool:
        return isinstance(self.a, Rational) and isinstance(self.b, Rational)

    @property
    def is_symmetric(self) -> bool:
        return self.a == self.b

    @property
    def mean(self) -> Probability:
        return beta_posterior_mean(self, SampleCount(0, 0))


UNIFORM_PRIOR = BetaPrior(1, 1)


@dataclass(frozen=True)
class GroupRates:
    """Actual and predicted target rates for one group."""

    group: str
    actual: Probability
    predicted: Probability

    def __post_init__(self) -> None:
        for name in ("actual", "predicted"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} rate must lie in [0, 1], got {value}")


# ── Analytic estimators ───────────────────────────────────────────


def sample_proportion(s: SampleCount) -> Fraction:
    if s.trials == 0:
        raise UndefinedProportionError("sample proportion is undefined for N = 0")
    return Fraction(s.successes, s.trials)


def rule_of_succession(s: SampleCount) -> Fraction:
    """(K + 1) / (N + 2); defined for N = 0, where it gives 1/2."""
    return Fraction(s.successes + 1, s.trials + 2)


def beta_posterior_mean(prior: BetaPrior, s: SampleCount) -> Probability:
    """Mean of Beta(K + a, N - K + b).

    Exact (a ``Fraction``) when both pseudo-counts are rational; float otherwise.
    """
    if prior.is_exact:
        a, b = Fraction(prior.a), Fraction(prior.b)
        return (s.successes + a) / (s.trials + a + b)
    return (s.successes + float(prior.a)) / (s.trials + float(prior.a) + float(prior.b))


def underprediction_metric(g: GroupRates) -> Probability:
    """(actual - predicted) / actual. Positive means the group is underpredicted."""
    if g.actual == 0:
        raise UndefinedMetricError(f"underprediction undefined for group {g.group!r}: actual = 0")
    return (g.actual - g.predicted) / g.actual


def observed_bias(predicted: Probability, actual: Probability) -> Probability:
    """(pred - act) / act, the signed orientation the audit stores (negative = under)."""
    if actual == 0:
        raise UndefinedMetricError("bias undefined: actual target rate is 0")
    return (predicted - actual) / actual


# ── Monte Carlo ───────────────────────────────────────────────────


@dataclass(frozen=True)
class GeneratingProbabilityRow:
    k: int
    proportion: Fraction
    mean: float | None
    """Mean generating probability; None when no iteration produced this K."""
    hits: int
    succession: Fraction


@dataclass(frozen=True)
class GeneratingProbabilityTable:
    n: int
    iterations: int
    seed: int
    rows: tuple[GeneratingProbabilityRow, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if [r.k for r in self.rows] != list(range(self.n + 1)):
            raise ValueError(f"rows must cover K = 0..{self.n} exactly once")

    def max_deviation(self) -> float:
        """Largest |mean - RoS| over the buckets that received hits."""
        gaps = [abs(r.mean - float(r.succession)) for r in self.rows if r.mean is not None]
        return max(gaps) if gaps else 0.0


def shard_layout(n: int, iterations: int) -> list[int]:
    per_shard = max(1, SHARD_DRAWS // n)
    full, rest = divmod(iterations, per_shard)
    return [per_shard] * full + ([rest] if rest else [])


def _run_shard(n: int, draws: int, seed: int, shard: int) -> tuple[np.ndarray, np.ndarray]:
    # PCG64 stream keyed on (seed, shard index)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, shard])))
    p = rng.random(draws)
    q = rng.random((draws, n))
    k = (q < p[:, None]).sum(axis=1)
    sums = np.bincount(k, weights=p, minlength=n + 1)
    hits = np.bincount(k, minlength=n + 1)
    return sums, hits


def simulate_generating_probabilities(
    n: int, iterations: int, seed: int, *, workers: int = 1
) -> GeneratingProbabilityTable:
    """Average the uniformly drawn p that produced each observed K in N Bernoulli(p) trials.

    Each iteration draws p once, then N uniforms q; every q < p is a success.
    """
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")

    layout = shard_layout(n, iterations)
    log.debug("Simulating N=%d over %d shard(s), %d worker(s)", n, len(layout), workers)
    parts = Parallel(n_jobs=workers, prefer="threads")(
        delayed(_run_shard)(n, draws, seed, i) for i, draws in enumerate(layout)
    )
    sums = np.zeros(n + 1)
    hits = np.zeros(n + 1, dtype=np.int64)
    for shard_sums, shard_hits in parts:
        sums += shard_sums
        hits += shard_hits

    rows = []
    for k in range(n + 1):
        count = int(hits[k])
        rows.append(
            GeneratingProbabilityRow(
                k=k,
                proportion=Fraction(k, n),
                mean=float(sums[k] / count) if count else None,
                hits=count,
                succession=rule_of_succession(SampleCount(k, n)),
            )
        )
    return GeneratingProbabilityTable(n=n, iterations=iterations, seed=seed, rows=tuple(rows))
