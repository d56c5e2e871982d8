import math

import numpy as np
import pytest

from effectport.errors import DegenerateMarginError, DomainError, ZeroCellError
from effectport.fixtures import STRATA
from effectport.tables import (
    EffectEstimate,
    EffectKind,
    TwoByTwoTable,
    collapsibility_report,
    correct_zero_cells,
    effect,
    or_from_rr_at_baseline,
    rr_from_or_at_baseline,
)
from simutil import random_table_cells


class TestZeroCellCorrection:
    def test_adds_half_to_all_cells_when_any_is_zero(self):
        corrected = correct_zero_cells(TwoByTwoTable(0, 10, 5, 5))
        assert (corrected.a, corrected.b, corrected.c, corrected.d) == (0.5, 10.5, 5.5, 5.5)

    def test_identity_without_zero_cells(self):
        table = TwoByTwoTable(10, 10, 10, 10)
        assert correct_zero_cells(table) is table

    def test_all_zero_table(self):
        corrected = correct_zero_cells(TwoByTwoTable(0, 0, 0, 0))
        assert (corrected.a, corrected.b, corrected.c, corrected.d) == (0.5,) * 4

    def test_idempotent_on_own_output(self):
        once = correct_zero_cells(TwoByTwoTable(0, 3, 7, 2))
        assert correct_zero_cells(once) is once

    def test_custom_increment_and_validation(self):
        corrected = correct_zero_cells(TwoByTwoTable(0, 1, 2, 3), increment=1.0)
        assert corrected.a == 1.0
        with pytest.raises(DomainError):
            correct_zero_cells(TwoByTwoTable(0, 1, 2, 3), increment=0.0)

    def test_negative_cells_rejected(self):
        with pytest.raises(DomainError):
            TwoByTwoTable(-1, 2, 3, 4)


class TestEffect:
    def test_crude_or_and_rr_match_reference_values(self):
        table = TwoByTwoTable(120, 80, 80, 120)
        assert effect(table, EffectKind.OR).point == pytest.approx(2.25)
        assert effect(table, EffectKind.RR).point == pytest.approx(1.50)

    def test_or_interval_matches_reference(self):
        est = effect(TwoByTwoTable(40, 60, 20, 80), EffectKind.OR)
        assert est.point == pytest.approx(2.67, abs=0.005)
        assert est.ci_low == pytest.approx(1.42, abs=0.005)
        assert est.ci_high == pytest.approx(5.02, abs=0.005)

    def test_symmetric_table_is_null(self):
        table = TwoByTwoTable(50, 50, 50, 50)
        assert effect(table, EffectKind.OR).point == 1.0
        assert effect(table, EffectKind.RR).point == 1.0
        assert effect(table, EffectKind.RD).point == 0.0

    def test_zero_cell_raises_without_correction(self):
        with pytest.raises(ZeroCellError):
            effect(TwoByTwoTable(0, 10, 5, 5), EffectKind.OR)
        with pytest.raises(ZeroCellError):
            effect(TwoByTwoTable(0, 10, 5, 5), EffectKind.RR)
        # the risk difference only needs margins
        assert effect(TwoByTwoTable(0, 10, 5, 5), EffectKind.RD).point == -0.5

    def test_zero_margin_raises(self):
        with pytest.raises(DegenerateMarginError):
            effect(TwoByTwoTable(0, 0, 5, 5), EffectKind.RD)

    def test_ratio_intervals_are_log_symmetric(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            table = TwoByTwoTable(*random_table_cells(rng))
            for kind in (EffectKind.OR, EffectKind.RR):
                est = effect(table, kind)
                assert est.ci_high / est.point == pytest.approx(
                    est.point / est.ci_low, rel=1e-9
                )

    def test_rd_interval_symmetric(self):
        est = effect(TwoByTwoTable(30, 70, 20, 80), EffectKind.RD)
        assert est.ci_high - est.point == pytest.approx(est.point - est.ci_low)

    def test_measures_agree_on_direction(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            table = TwoByTwoTable(*random_table_cells(rng))
            or_p = effect(table, EffectKind.OR).point
            rr_p = effect(table, EffectKind.RR).point
            rd_p = effect(table, EffectKind.RD).point
            assert (or_p - 1) * (rr_p - 1) >= 0
            assert (rr_p - 1) * rd_p >= 0

    def test_interval_shrinks_when_cells_scale_up(self):
        base = TwoByTwoTable(30, 70, 20, 80)
        bigger = TwoByTwoTable(90, 210, 60, 240)
        for kind in EffectKind:
            small, large = effect(base, kind), effect(bigger, kind)
            assert large.point == pytest.approx(small.point)
            assert large.se_t < small.se_t
            assert large.ci_high - large.ci_low < small.ci_high - small.ci_low

    def test_estimate_validation_rejects_bad_intervals(self):
        with pytest.raises(DomainError):
            EffectEstimate(EffectKind.OR, 2.0, 0.1, 2.5, 3.0)
        with pytest.raises(DomainError):
            EffectEstimate(EffectKind.OR, 2.0, 0.1, 1.0, 3.5)  # not log-symmetric


class TestConversions:
    def test_rr_from_or_reference_stratum(self):
        assert rr_from_or_at_baseline(8 / 3, 0.2) == pytest.approx(2.0, abs=1e-12)

    def test_null_is_conversion_invariant(self):
        for p0 in (0.05, 0.3, 0.9):
            assert rr_from_or_at_baseline(1.0, p0) == pytest.approx(1.0)
            assert or_from_rr_at_baseline(1.0, p0) == pytest.approx(1.0)

    def test_rr_capped_by_baseline_risk(self):
        # at p0 = 0.6 a RR of 2 is impossible; the OR of 2 converts below 1/0.6
        assert rr_from_or_at_baseline(2.0, 0.6) == pytest.approx(1.25)
        with pytest.raises(DomainError):
            or_from_rr_at_baseline(2.0, 0.6)

    def test_or_from_rr_reference_stratum(self):
        assert or_from_rr_at_baseline(2.0, 0.2) == pytest.approx(8 / 3, abs=1e-12)

    def test_round_trip(self):
        value = rr_from_or_at_baseline(or_from_rr_at_baseline(1.5, 0.3), 0.3)
        assert value == pytest.approx(1.5, abs=1e-12)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            rr_from_or_at_baseline(0.0, 0.2)
        with pytest.raises(DomainError):
            rr_from_or_at_baseline(2.0, 1.0)
        with pytest.raises(DomainError):
            or_from_rr_at_baseline(-1.0, 0.2)

    def test_single_table_relation_is_exact(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            table = TwoByTwoTable(*random_table_cells(rng))
            or_point = effect(table, EffectKind.OR).point
            rr_point = effect(table, EffectKind.RR).point
            converted = rr_from_or_at_baseline(or_point, table.baseline_risk)
            assert converted == pytest.approx(rr_point, rel=1e-9)


class TestCollapsibility:
    def test_constant_or_strata_are_not_collapsible(self):
        report = collapsibility_report(list(STRATA["1A"]), EffectKind.OR)
        assert report.crude.point == pytest.approx(2.25)
        assert [est.point for _, est in report.strata] == pytest.approx([8 / 3, 8 / 3])
        assert not report.collapsible
        # crude is closer to the null, on the log scale
        assert report.attenuation == pytest.approx(math.log(2.25) - math.log(8 / 3))
        assert report.attenuation < 0

    def test_constant_rr_strata_are_collapsible(self):
        report = collapsibility_report(list(STRATA["1B"]), EffectKind.RR)
        assert report.crude.point == pytest.approx(2.0)
        assert report.collapsible
        assert report.attenuation == pytest.approx(0.0, abs=1e-12)

    def test_duplicated_stratum_collapses(self):
        table = TwoByTwoTable(30, 70, 20, 80)
        for kind in EffectKind:
            report = collapsibility_report([("s1", table), ("s2", table)], kind)
            assert report.collapsible
            assert report.crude.point == pytest.approx(
                effect(table, kind).point, rel=1e-12
            )

    def test_heterogeneous_strata_have_no_attenuation(self):
        strata = [("s1", TwoByTwoTable(30, 70, 20, 80)), ("s2", TwoByTwoTable(50, 50, 20, 80))]
        report = collapsibility_report(strata, EffectKind.OR)
        assert not report.collapsible
        assert report.attenuation is None

    def test_needs_two_strata(self):
        with pytest.raises(DomainError):
            collapsibility_report([("only", TwoByTwoTable(1, 1, 1, 1))], EffectKind.OR)

    def test_balanced_constant_rr_collapses_exactly(self):
        # equal arm sizes per stratum and a shared RR: the crude RR equals it
        rng = np.random.default_rng(7)
        for _ in range(50):
            rr = rng.uniform(0.3, 1.8)
            strata = []
            for s in range(3):
                p0 = rng.uniform(0.05, min(0.9, 0.95 / max(rr, 1.0)) - 0.01)
                p1 = rr * p0
                strata.append(
                    (f"z{s}", TwoByTwoTable(100 * p1, 100 * (1 - p1), 100 * p0, 100 * (1 - p0)))
                )
            report = collapsibility_report(strata, EffectKind.RR)
            assert report.crude.point == pytest.approx(rr, rel=1e-9)
            assert report.collapsible

    def test_balanced_constant_or_crude_is_closer_to_null(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            odds_ratio = rng.uniform(1.5, 6.0)
            strata = []
            risks = rng.uniform(0.05, 0.9, size=2)
            risks[1] = risks[0] + rng.uniform(0.05, 0.95 - risks[0])  # Z raises risk
            for s, p0 in enumerate(risks):
                p1 = rr_from_or_at_baseline(odds_ratio, p0) * p0
                strata.append(
                    (f"z{s}", TwoByTwoTable(100 * p1, 100 * (1 - p1), 100 * p0, 100 * (1 - p0)))
                )
            report = collapsibility_report(strata, EffectKind.OR)
            assert 1.0 < report.crude.point < odds_ratio * (1 + 1e-9)
            assert report.attenuation < 0
