"""Tests for analytic_model module."""

import math
from fractions import Fraction
from itertools import pairwise

import numpy as np
import pytest

from underprediction_kit.analytic_model import (
    Curve,
    LeafSizeDistribution,
    LeafSizeHistogram,
    PvcScenario,
    aggregate_bias,
    bias_ratio,
    exponential_spread,
    exponential_spread_with_target,
    fit_power_law,
    group_underprediction,
    group_underprediction_curve,
    leaf_inferred_probability,
    nearest_size,
    round_half_up,
    sample_power_law_sizes,
    single_pvc_scenario,
    target_plus_spread,
    threshold_curve,
    threshold_group_rate,
    threshold_predicted_rate,
)
from underprediction_kit.errors import DegenerateFitError, SingularRatioError
from underprediction_kit.inference import BetaPrior

EXPONENTS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
SIZES = (10, 100, 1000)


def _more_than_half(size: int, p: float) -> float:
    return math.fsum(
        math.comb(size, k) * p**k * (1 - p) ** (size - k)
        for k in range(size + 1)
        if 2 * k > size
    )


# ── Rounding helpers ────────────────────────────────────────────────


class TestRounding:
    def test_nearest_size(self) -> None:
        assert nearest_size(0.5) == 1
        assert nearest_size(2.4) == 2
        assert nearest_size(3.96) == 4
        assert nearest_size(-0.3) == 0

    def test_round_half_up(self) -> None:
        assert round_half_up(0.185) == 0.19
        assert round_half_up(0.0332) == 0.03
        assert round_half_up(0.6496) == 0.65


# ── Single-PVC scenario ─────────────────────────────────────────────


class TestSinglePvcScenario:
    @pytest.fixture()
    def worked(self) -> PvcScenario:
        return PvcScenario(total=100, minority_share=0.2, majority_rate=0.2, minority_rate=0.2)

    def test_pvc_counts(self, worked: PvcScenario) -> None:
        assert worked.majority_count == 80
        assert worked.minority_count == 20
        assert worked.majority_pvc_count == 16
        assert worked.minority_pvc_count == 4

    def test_exact_conditionals(self, worked: PvcScenario) -> None:
        result = single_pvc_scenario(worked)
        assert result.majority.conditional == Fraction(17, 18)
        assert result.minority.conditional == Fraction(5, 6)

    def test_count_table(self, worked: PvcScenario) -> None:
        result = single_pvc_scenario(worked)
        assert result.majority.counts() == {
            "target0_x0": 64, "target0_x1": 0, "target1_x0": 0, "target1_x1": 16,
        }
        assert result.minority.counts()["target0_x0"] == 16

    def test_unrounded_values(self, worked: PvcScenario) -> None:
        result = single_pvc_scenario(worked)
        assert result.majority.joint_predicted == pytest.approx(17 / 18 * 0.2 * 0.8)
        assert result.minority.joint_predicted == pytest.approx(5 / 6 * 0.2 * 0.2)
        assert result.minority.relative_fall == pytest.approx(1 / 6)
        assert result.majority.relative_fall == pytest.approx(1 / 18)

    def test_two_decimal_cells(self, worked: PvcScenario) -> None:
        result = single_pvc_scenario(worked)
        maj = result.rounded(result.majority)
        mino = result.rounded(result.minority)
        assert maj.predicted_rate == pytest.approx(0.188, abs=1e-12)
        assert mino.predicted_rate == pytest.approx(0.166, abs=1e-12)
        assert (maj.target1, mino.target1) == (0.15, 0.03)
        assert (maj.target0, mino.target0) == (0.65, 0.17)
        assert maj.joint_fall == pytest.approx(0.0625)
        assert mino.joint_fall == pytest.approx(0.25)

    def test_census_rates_rerun(self) -> None:
        s = PvcScenario(total=100, minority_share=0.33, majority_rate=0.30, minority_rate=0.12)
        result = single_pvc_scenario(s)
        assert result.majority.conditional == Fraction(21, 22)
        assert result.minority.conditional == Fraction(5, 6)
        maj = result.rounded(result.majority)
        mino = result.rounded(result.minority)
        assert (maj.target1, mino.target1) == (0.19, 0.03)
        assert (maj.target0, mino.target0) == (0.48, 0.30)

    def test_minority_underpredicted_more(self, worked: PvcScenario) -> None:
        result = single_pvc_scenario(worked)
        assert result.minority.relative_fall > result.majority.relative_fall > 0

    def test_empty_pvc_falls_back_to_prior(self, caplog: pytest.LogCaptureFixture) -> None:
        s = PvcScenario(total=10, minority_share=0.2, majority_rate=0.5, minority_rate=0.1)
        result = single_pvc_scenario(s)
        assert result.minority.pvc_count == 0
        assert result.minority.degenerate
        assert result.minority.conditional == Fraction(1, 2)
        assert "no PVC occurrences" in caplog.text

    def test_odd_total_counts_partition_n(self) -> None:
        s = PvcScenario(101, 0.5, 0.2, 0.2)
        result = single_pvc_scenario(s)
        assert (result.majority.size, result.minority.size) == (51, 50)
        cells = [v for g in result.groups for v in g.counts().values()]
        assert sum(cells) == 101
        assert sum(g.counts()["target1_x1"] for g in result.groups) == 20

    def test_pvc_never_exceeds_group(self) -> None:
        result = single_pvc_scenario(PvcScenario(101, 0.5, 1.0, 1.0))
        for g in result.groups:
            assert g.counts() == {
                "target0_x0": 0, "target0_x1": 0, "target1_x0": 0, "target1_x1": g.size,
            }

    def test_fall_undefined_without_positives(self) -> None:
        result = single_pvc_scenario(PvcScenario(100, 0.2, 0.2, 0.0))
        assert result.minority.relative_fall is None
        assert result.rounded(result.minority).joint_fall is None
        assert result.majority.relative_fall == pytest.approx(1 / 18)

    def test_float_prior(self) -> None:
        s = PvcScenario(100, 0.2, 0.2, 0.2, prior=BetaPrior(0.5, 0.5))
        result = single_pvc_scenario(s)
        assert float(result.majority.conditional) == pytest.approx(16.5 / 17)

    def test_validation(self) -> None:
        with pytest.raises(ValueError, match="minority share"):
            PvcScenario(100, 0.0, 0.2, 0.2)
        with pytest.raises(ValueError, match="total"):
            PvcScenario(0, 0.2, 0.2, 0.2)


# ── Leaf-size histograms and spread ─────────────────────────────────


class TestLeafSizeHistogram:
    def test_from_sizes_weights_by_population(self) -> None:
        h = LeafSizeHistogram.from_sizes([1, 1, 2])
        assert h.entries == ((1, 0.5), (2, 0.5))

    def test_zero_sizes_skipped(self) -> None:
        assert LeafSizeHistogram.from_sizes([0, 3, 0]).entries == ((3, 1.0),)

    def test_must_sum_to_one(self) -> None:
        with pytest.raises(ValueError, match="sum to 1"):
            LeafSizeHistogram(((1, 0.4), (2, 0.4)))

    def test_rejects_empty(self) -> None:
        with pytest.raises(ValueError):
            LeafSizeHistogram.from_sizes([0, 0])

    def test_mass_below(self) -> None:
        h = LeafSizeHistogram.from_sizes([10, 10, 200])
        assert h.mass_below(100) == pytest.approx(20 / 220)


class TestExponentialSpread:
    def test_singletons_give_one(self) -> None:
        assert exponential_spread(LeafSizeHistogram.from_sizes([1] * 7)) == pytest.approx(1.0)

    def test_one_giant_leaf(self) -> None:
        assert exponential_spread(LeafSizeHistogram.from_sizes([50])) == pytest.approx(1 / 50)

    def test_mixed(self) -> None:
        h = LeafSizeHistogram.from_sizes([1, 1, 2])
        assert exponential_spread(h) == pytest.approx(0.75)

    def test_target_inside_each_term(self) -> None:
        h = LeafSizeHistogram.from_sizes([1, 1, 2])
        assert exponential_spread_with_target(h, 0.2) == pytest.approx(0.7 + 0.35)
        assert target_plus_spread(h, 0.2) == pytest.approx(0.95)

    def test_target_rate_range(self) -> None:
        with pytest.raises(ValueError):
            exponential_spread_with_target(LeafSizeHistogram.from_sizes([1]), 1.2)

    def test_smaller_leaves_spread_more(self) -> None:
        small = LeafSizeHistogram.from_sizes([2, 3, 2, 4])
        large = LeafSizeHistogram.from_sizes([20, 30, 20, 40])
        assert exponential_spread(small) > exponential_spread(large)


# ── Per-leaf bias ───────────────────────────────────────────────────


class TestLeafBias:
    def test_inferred_probability(self) -> None:
        assert leaf_inferred_probability(0.9, 8) == pytest.approx(0.82)
        assert leaf_inferred_probability(0.9, 0) == pytest.approx(0.5)
        assert leaf_inferred_probability(1.0, 16) == pytest.approx(17 / 18)
        assert leaf_inferred_probability(0.9, 10) == pytest.approx(10 / 12)

    @pytest.mark.parametrize("quality", [0.0, 0.1, 0.3, 0.7, 0.9, 1.0])
    def test_deviation_shrinks_with_leaf_size(self, quality: float) -> None:
        deviations = [abs(leaf_inferred_probability(quality, f) - quality) for f in range(201)]
        assert all(b < a for a, b in pairwise(deviations))
        assert leaf_inferred_probability(quality, 10**6) == pytest.approx(quality, abs=1e-5)

    def test_no_deviation_at_half(self) -> None:
        assert all(leaf_inferred_probability(0.5, f) == 0.5 for f in range(50))

    def test_inferred_probability_needs_symmetric_prior(self) -> None:
        with pytest.raises(ValueError, match="symmetric"):
            leaf_inferred_probability(0.9, 8, BetaPrior(1, 2))

    def test_bias_ratio_value(self) -> None:
        # minority sub-leaf 2 rows, majority 8 rows
        assert bias_ratio(10, 0.2, 0.3, 0.3) == pytest.approx(2.5)
        assert bias_ratio(20, 0.2, 0.9, 0.9) == pytest.approx(3.0)

    def test_bias_ratio_singular_at_half(self) -> None:
        with pytest.raises(SingularRatioError, match="F=10"):
            bias_ratio(10, 0.2, 0.5, 0.3)

    @pytest.mark.parametrize("quality", [0.1, 0.3, 0.7, 0.9])
    def test_aggregate_bias_at_least_one(self, quality: float) -> None:
        for x in EXPONENTS:
            d = LeafSizeDistribution.power_law(x, 100)
            assert aggregate_bias(d, 0.2, quality, quality) >= 1.0


# ── Underprediction curves ──────────────────────────────────────────


class TestUnderpredictionCurves:
    def test_exponent_sweep_increases(self) -> None:
        curve = group_underprediction_curve(max_size=1000, group_fraction=0.2, quality=0.9)
        values = [y for _, y in curve.points]
        assert all(b > a for a, b in zip(values, values[1:], strict=False))
        assert curve.x_label == "exponent"

    def test_minority_underpredicted_more(self) -> None:
        for x in EXPONENTS:
            d = LeafSizeDistribution.power_law(x, 1000)
            assert group_underprediction(d, 0.9, 0.2) > group_underprediction(d, 0.9, 0.8)

    def test_quality_sweep(self) -> None:
        curve = group_underprediction_curve(
            max_size=1000, group_fraction=0.2, sweep="quality", exponent=2.0
        )
        values = [y for _, y in curve.points]
        assert values[0] == pytest.approx(0.0, abs=1e-12)
        assert all(b > a for a, b in zip(values, values[1:], strict=False))
        assert curve.x_label == "quality"

    def test_group_fraction_range(self) -> None:
        d = LeafSizeDistribution.power_law(2.0, 10)
        with pytest.raises(ValueError, match="group fraction"):
            group_underprediction(d, 0.9, 0.0)

    def test_csv(self) -> None:
        curve = Curve("exponent", "underprediction", ((1.0, 0.25), (2.0, 0.5)))
        assert curve.to_csv() == "exponent,underprediction\n1.0,0.25\n2.0,0.5\n"


# ── Decision-threshold model ────────────────────────────────────────


class TestThresholdModel:
    def test_single_trial_is_exact(self) -> None:
        for p in np.linspace(0.01, 0.99, 99):
            assert threshold_predicted_rate(1, float(p)) == float(p)

    def test_matches_binomial_enumeration(self) -> None:
        for size in range(1, 13):
            for p in (0.05, 0.2, 0.35, 0.5, 0.65, 0.9):
                expected = _more_than_half(size, p)
                assert threshold_predicted_rate(size, p) == pytest.approx(expected, abs=1e-12)

    def test_small_leaves(self) -> None:
        assert threshold_predicted_rate(3, 0.2) == pytest.approx(0.104)
        assert threshold_predicted_rate(2, 0.5) == pytest.approx(0.25)

    def test_half_tie_rule(self) -> None:
        # two trials, one success: counted as one half
        p = 0.3
        expected = p * p + 0.5 * 2 * p * (1 - p)
        assert threshold_predicted_rate(2, p, tie_rule="half") == pytest.approx(expected)

    def test_underpredicts_below_half(self) -> None:
        for p in (0.05, 0.1, 0.2, 0.3, 0.4, 0.45):
            for n in SIZES:
                for x in EXPONENTS:
                    d = LeafSizeDistribution.power_law(x, n)
                    assert threshold_group_rate(d, p) < p

    def test_gap_shrinks_with_exponent(self) -> None:
        for p in (0.1, 0.2, 0.3, 0.4):
            for n in SIZES:
                gaps = [
                    p - threshold_group_rate(LeafSizeDistribution.power_law(x, n), p)
                    for x in EXPONENTS
                ]
                assert all(b < a for a, b in zip(gaps, gaps[1:], strict=False))

    def test_overpredicts_above_half_with_half_ties(self) -> None:
        for p in (0.55, 0.6, 0.7, 0.8, 0.9, 0.95):
            for n in SIZES:
                for x in EXPONENTS:
                    d = LeafSizeDistribution.power_law(x, n)
                    assert threshold_group_rate(d, p, tie_rule="half") > p

    def test_overpredicts_example_with_strict_ties(self) -> None:
        d = LeafSizeDistribution.power_law(2.0, 100)
        assert threshold_group_rate(d, 0.8) > 0.8

    def test_odd_sizes_monotone(self) -> None:
        for p in (0.1, 0.3, 0.45):
            rates = [threshold_predicted_rate(f, p) for f in range(1, 40, 2)]
            assert all(b < a for a, b in zip(rates, rates[1:], strict=False))

    def test_strict_rule_rises_from_even_to_odd(self) -> None:
        for p in (0.05, 0.25, 0.45):
            for f in range(2, 200, 2):
                assert threshold_predicted_rate(f + 1, p) > threshold_predicted_rate(f, p)

    def test_half_rule_monotone_over_all_sizes(self) -> None:
        for p in np.linspace(0.05, 0.45, 9):
            rates = [threshold_predicted_rate(f, float(p), tie_rule="half") for f in range(1, 201)]
            assert all(b <= a + 1e-12 for a, b in pairwise(rates))
            # an even size ties with the odd size below it
            assert rates[3] == pytest.approx(rates[2], abs=1e-12)

    def test_flat_at_half_for_odd_sizes(self) -> None:
        curve = threshold_curve(0.5, 1000, odd_only=True)
        for _, y in curve.points:
            assert y == pytest.approx(0.5, abs=1e-12)
        assert curve.y_label == "predicted_rate"

    def test_rejects_bad_inputs(self) -> None:
        with pytest.raises(ValueError):
            threshold_predicted_rate(0, 0.3)
        with pytest.raises(ValueError):
            threshold_predicted_rate(3, 1.3)


# ── Power-law fit ───────────────────────────────────────────────────


class TestPowerLaw:
    def test_distribution_normalised(self) -> None:
        d = LeafSizeDistribution.power_law(2.0, 50)
        assert d.weights.sum() == pytest.approx(1.0)
        assert d.sizes[0] == 1 and d.sizes[-1] == 50

    def test_odd_only_support(self) -> None:
        d = LeafSizeDistribution.power_law(1.0, 10, odd_only=True)
        assert list(d.sizes) == [1, 3, 5, 7, 9]

    def test_rejects_bad_parameters(self) -> None:
        with pytest.raises(ValueError, match="exponent"):
            LeafSizeDistribution.power_law(0.0, 10)
        with pytest.raises(ValueError, match="max size"):
            LeafSizeDistribution.power_law(1.0, 0)

    @pytest.mark.parametrize("exponent", [1.5, 2.0, 2.5])
    def test_recovers_generator_exponent(self, exponent: float) -> None:
        rng = np.random.default_rng(7)
        sizes = sample_power_law_sizes(exponent, 1000, 10_000, rng)
        assert fit_power_law(sizes.tolist()) == pytest.approx(exponent, abs=0.15)

    def test_degenerate_sizes(self) -> None:
        with pytest.raises(DegenerateFitError):
            fit_power_law([3, 3, 3])

    def test_rejects_non_positive(self) -> None:
        with pytest.raises(ValueError):
            fit_power_law([0, 2, 3])
