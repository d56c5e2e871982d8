import math

import numpy as np
import pytest

from effectport import glm
from effectport.errors import (
    BoundaryError,
    DataValidationError,
    DomainError,
    MissingTermError,
    NestingError,
    RankDeficientError,
    SeparationError,
)
from effectport.fixtures import STRATA, fixture_dataset
from effectport.glm import Dataset, ModelSpec, fit, log_likelihood, lrt, score, standardize, stratum_effect
from effectport.tables import EffectKind, effect

SATURATED = ("X", "Z", "X:Z")


@pytest.fixture(scope="module")
def data_1a():
    return fixture_dataset("1A")


@pytest.fixture(scope="module")
def data_1b():
    return fixture_dataset("1B")


def expand_rows(name):
    """Row-per-subject version of a fixture dataset."""
    rows = []
    for label, table in STRATA[name]:
        z = 1.0 if label == "Z=1" else 0.0
        for y, x, count in (
            (1, 1.0, table.a), (0, 1.0, table.b), (1, 0.0, table.c), (0, 0.0, table.d),
        ):
            rows += [(y, {"X": x, "Z": z})] * int(count)
    return Dataset.from_rows(rows)


class TestDataset:
    def test_grouped_and_row_expanded_agree(self, data_1a):
        expanded = expand_rows("1A")
        assert expanded.equals(data_1a)
        fit_a = fit(data_1a, ModelSpec(glm.LOGIT, SATURATED))
        fit_b = fit(expanded, ModelSpec(glm.LOGIT, SATURATED))
        assert np.array_equal(fit_a.beta, fit_b.beta)
        assert fit_a.loglik == fit_b.loglik

    def test_pattern_order_is_canonical(self):
        records = [({"X": 1.0, "Z": 0.0}, 3, 10), ({"X": 0.0, "Z": 0.0}, 2, 10)]
        forward = Dataset.from_aggregated(records)
        backward = Dataset.from_aggregated(records[::-1])
        assert forward.equals(backward)

    def test_duplicate_patterns_merge(self):
        merged = Dataset.from_aggregated(
            [({"X": 1.0, "Z": 0.0}, 3, 10), ({"X": 1.0, "Z": 0.0}, 1, 5)]
        )
        assert merged.n_patterns == 1
        assert merged.events[0] == 4 and merged.trials[0] == 15

    def test_validation(self):
        with pytest.raises(DataValidationError):
            Dataset.from_rows([(2, {"X": 1.0})])
        with pytest.raises(DataValidationError):
            Dataset.from_rows([(1, {"X": 1.0}, -1.0)])
        with pytest.raises(DataValidationError):
            Dataset.from_aggregated([({"X": 1.0}, 5, 3)])

    def test_subset(self, data_1a):
        sub = data_1a.subset("Z", 1.0)
        assert sub.n_patterns == 2
        assert sub.trials.sum() == 200
        with pytest.raises(DataValidationError):
            data_1a.subset("Z", 9.0)


class TestFit:
    def test_saturated_logit_matches_reference(self, data_1b):
        result = fit(data_1b, ModelSpec(glm.LOGIT, SATURATED))
        assert result.converged
        assert result.exp_coef("X") == pytest.approx(2.67, abs=0.005)
        assert result.exp_coef("Z") == pytest.approx(1.71, abs=0.005)
        assert result.exp_coef("X:Z") == pytest.approx(1.31, abs=0.005)

    def test_saturated_log_link_matches_reference(self, data_1a):
        result = fit(data_1a, ModelSpec(glm.LOG, SATURATED))
        assert result.exp_coef("X") == pytest.approx(2.00, abs=0.005)
        assert result.exp_coef("Z") == pytest.approx(3.00, abs=0.005)
        assert result.exp_coef("X:Z") == pytest.approx(2 / 3, abs=0.005)

    @pytest.mark.parametrize("name", ["1A", "1B"])
    @pytest.mark.parametrize(
        "kind,link", [(EffectKind.OR, glm.LOGIT), (EffectKind.RR, glm.LOG)]
    )
    def test_univariate_fit_equals_tabular_crude(self, name, kind, link):
        data = fixture_dataset(name)
        pooled = STRATA[name][0][1].pooled_with(STRATA[name][1][1])
        result = fit(data, ModelSpec(link, ("X",)))
        assert result.exp_coef("X") == pytest.approx(
            effect(pooled, kind).point, rel=1e-8
        )

    @pytest.mark.parametrize("name", ["1A", "1B"])
    @pytest.mark.parametrize(
        "kind,link", [(EffectKind.OR, glm.LOGIT), (EffectKind.RR, glm.LOG)]
    )
    def test_saturated_fit_equals_tabular_strata(self, name, kind, link):
        data = fixture_dataset(name)
        result = fit(data, ModelSpec(link, SATURATED))
        by_label = dict(STRATA[name])
        assert result.exp_coef("X") == pytest.approx(
            effect(by_label["Z=0"], kind).point, rel=1e-8
        )
        assert stratum_effect(result, "X", "Z", 1.0) == pytest.approx(
            effect(by_label["Z=1"], kind).point, rel=1e-8
        )

    def test_null_data_gives_unit_ratios(self):
        records = [
            ({"X": x, "Z": z}, 30, 100) for x in (0.0, 1.0) for z in (0.0, 1.0)
        ]
        data = Dataset.from_aggregated(records)
        for link in glm.LINKS:
            result = fit(data, ModelSpec(link, SATURATED))
            for term in SATURATED:
                assert result.exp_coef(term) == pytest.approx(1.0, abs=1e-9)

    def test_wald_se_matches_tabular_for_saturated_logit(self, data_1b):
        result = fit(data_1b, ModelSpec(glm.LOGIT, SATURATED))
        table = dict(STRATA["1B"])["Z=0"]
        assert result.se("X") == pytest.approx(
            effect(table, EffectKind.OR).se_t, rel=1e-7
        )

    def test_deviance_trace_non_increasing(self, data_1a):
        for link in glm.LINKS:
            result = fit(data_1a, ModelSpec(link, ("X", "Z")))
            trace = result.deviance_trace
            assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_log_link_probabilities_stay_below_one(self):
        records = [
            ({"X": 0.0, "Z": 0.0}, 60, 100),
            ({"X": 1.0, "Z": 0.0}, 90, 100),
            ({"X": 0.0, "Z": 1.0}, 70, 100),
            ({"X": 1.0, "Z": 1.0}, 95, 100),
        ]
        data = Dataset.from_aggregated(records)
        result = fit(data, ModelSpec(glm.LOG, ("X", "Z")))
        assert np.all(result.fitted_probabilities() <= 1.0)

    def test_score_matches_finite_differences(self, data_1b):
        spec = ModelSpec(glm.LOGIT, SATURATED)
        result = fit(data_1b, spec)
        for beta in (result.beta, result.beta + 0.05):
            analytic = score(data_1b, spec, beta)
            step = 1e-6
            for i in range(len(beta)):
                e = np.zeros(len(beta))
                e[i] = step
                numeric = (
                    log_likelihood(data_1b, spec, beta + e)
                    - log_likelihood(data_1b, spec, beta - e)
                ) / (2 * step)
                assert analytic[i] == pytest.approx(numeric, abs=1e-4)

    def test_rank_deficient_design_raises(self, data_1a):
        with pytest.raises(DomainError):
            ModelSpec(glm.LOGIT, ("X", "X"))
        # Z is constant within the subset, collinear with the intercept
        with pytest.raises(RankDeficientError):
            fit(data_1a.subset("Z", 0.0), ModelSpec(glm.LOGIT, ("X", "Z")))

    def test_separated_data_raises(self):
        data = Dataset.from_aggregated(
            [({"X": 0.0}, 0, 50), ({"X": 1.0}, 50, 50)]
        )
        with pytest.raises(SeparationError):
            fit(data, ModelSpec(glm.LOGIT, ("X",)))

    def test_log_link_boundary_raises_with_fit_attached(self):
        data = Dataset.from_aggregated(
            [({"X": 0.0}, 50, 100), ({"X": 1.0}, 100, 100)]
        )
        with pytest.raises(BoundaryError) as excinfo:
            fit(data, ModelSpec(glm.LOG, ("X",)))
        boundary_fit = excinfo.value.fit
        assert boundary_fit is not None
        assert not boundary_fit.converged
        assert np.all(boundary_fit.fitted_probabilities() <= 1.0)

    def test_model_spec_validation(self):
        with pytest.raises(DomainError):
            ModelSpec("identity", ("X",))
        with pytest.raises(DomainError):
            ModelSpec(glm.LOGIT, ("X:Z",))  # product without main effects
        with pytest.raises(DomainError):
            ModelSpec(glm.LOGIT, ("X", "Z", "X:Z", "Z:X"))  # duplicate product


class TestStratumEffect:
    def test_reference_level_returns_main_effect(self, data_1a):
        result = fit(data_1a, ModelSpec(glm.LOG, SATURATED))
        assert stratum_effect(result, "Z", "X", 0.0) == result.exp_coef("Z")

    def test_log_link_product_recovers_tabular_value(self, data_1a):
        result = fit(data_1a, ModelSpec(glm.LOG, SATURATED))
        assert stratum_effect(result, "Z", "X", 1.0) == pytest.approx(2.0, abs=1e-6)

    def test_logit_product_recovers_tabular_value(self, data_1b):
        result = fit(data_1b, ModelSpec(glm.LOGIT, SATURATED))
        assert stratum_effect(result, "X", "Z", 1.0) == pytest.approx(3.5, abs=1e-6)

    def test_missing_term(self, data_1a):
        result = fit(data_1a, ModelSpec(glm.LOGIT, ("X",)))
        with pytest.raises(MissingTermError):
            stratum_effect(result, "Q", "X", 1.0)
        with pytest.raises(MissingTermError):
            stratum_effect(result, "X", "Q", 1.0)


def simulate_logistic(n, beta_x, beta_z, beta_xz, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, size=n).astype(float)
    z = rng.integers(0, 2, size=n).astype(float)
    eta = -1.0 + beta_x * x + beta_z * z + beta_xz * x * z
    y = rng.random(n) < 1.0 / (1.0 + np.exp(-eta))
    return Dataset.from_rows(
        [(int(yi), {"X": xi, "Z": zi}) for yi, xi, zi in zip(y, x, z)]
    )


class TestLrt:
    def test_identical_models(self, data_1a):
        spec = ModelSpec(glm.LOGIT, ("X", "Z"))
        result = lrt(fit(data_1a, spec), fit(data_1a, spec))
        assert result.statistic == 0.0
        assert result.df == 0
        assert result.p == 1.0

    def test_null_interaction_has_zero_statistic(self, data_1a):
        full = fit(data_1a, ModelSpec(glm.LOGIT, SATURATED))
        reduced = fit(data_1a, ModelSpec(glm.LOGIT, ("X", "Z")))
        result = lrt(full, reduced)
        assert result.df == 1
        assert result.statistic == pytest.approx(0.0, abs=1e-8)
        assert result.p == pytest.approx(1.0, abs=1e-4)

    def test_strong_interaction_is_detected(self):
        data = simulate_logistic(4000, 0.4, 0.3, math.log(3.0), seed=42)
        full = fit(data, ModelSpec(glm.LOGIT, SATURATED))
        reduced = fit(data, ModelSpec(glm.LOGIT, ("X", "Z")))
        result = lrt(full, reduced)
        assert result.p < 0.01

    def test_result_carries_advisory_note(self, data_1a):
        spec = ModelSpec(glm.LOGIT, ("X",))
        result = lrt(fit(data_1a, spec), fit(data_1a, spec))
        assert "discouraged" in result.note

    def test_nesting_violations(self, data_1a, data_1b):
        full = fit(data_1a, ModelSpec(glm.LOGIT, SATURATED))
        with pytest.raises(NestingError):
            lrt(full, fit(data_1a, ModelSpec(glm.LOG, ("X", "Z"))))
        with pytest.raises(NestingError):
            lrt(fit(data_1a, ModelSpec(glm.LOGIT, ("X",))), fit(data_1a, ModelSpec(glm.LOGIT, ("Z",))))
        with pytest.raises(NestingError):
            lrt(full, fit(data_1b, ModelSpec(glm.LOGIT, ("X", "Z"))))


class TestStandardize:
    def test_balanced_design_recovers_crude_measures(self, data_1a):
        result = fit(data_1a, ModelSpec(glm.LOGIT, SATURATED))
        standardized = standardize(result, data_1a, "X", n_resamples=50, seed=1)
        assert standardized.risk_exposed == pytest.approx(0.6, abs=1e-8)
        assert standardized.risk_unexposed == pytest.approx(0.4, abs=1e-8)
        assert standardized.odds_ratio.point == pytest.approx(2.25, abs=1e-7)
        assert standardized.risk_ratio.point == pytest.approx(1.5, abs=1e-7)
        assert standardized.risk_difference.point == pytest.approx(0.2, abs=1e-7)

    def test_null_association(self):
        records = [
            ({"X": x, "Z": z}, 30, 100) for x in (0.0, 1.0) for z in (0.0, 1.0)
        ]
        data = Dataset.from_aggregated(records)
        result = fit(data, ModelSpec(glm.LOGIT, SATURATED))
        standardized = standardize(result, data, "X", n_resamples=50, seed=1)
        assert standardized.odds_ratio.point == pytest.approx(1.0, abs=1e-8)
        assert standardized.risk_difference.point == pytest.approx(0.0, abs=1e-8)

    def test_confounded_data_standardized_differs_from_crude(self):
        # X=1 subjects are mostly Z=1, and Z raises risk
        records = [
            ({"X": 1.0, "Z": 1.0}, 210, 300),
            ({"X": 1.0, "Z": 0.0}, 30, 100),
            ({"X": 0.0, "Z": 1.0}, 50, 100),
            ({"X": 0.0, "Z": 0.0}, 30, 300),
        ]
        data = Dataset.from_aggregated(records)
        result = fit(data, ModelSpec(glm.LOGIT, SATURATED))
        standardized = standardize(result, data, "X", n_resamples=50, seed=1)
        # direct standardization oracle: Z weights are 400/800 each
        assert standardized.risk_exposed == pytest.approx(0.5 * 0.7 + 0.5 * 0.3, abs=1e-8)
        assert standardized.risk_unexposed == pytest.approx(0.5 * 0.5 + 0.5 * 0.1, abs=1e-8)
        assert standardized.risk_ratio.point == pytest.approx(5 / 3, abs=1e-7)
        crude_rr = (240 / 400) / (80 / 400)
        assert abs(standardized.risk_ratio.point - crude_rr) > 0.5

    def test_bootstrap_is_seeded_and_brackets_point(self, data_1a):
        result = fit(data_1a, ModelSpec(glm.LOGIT, SATURATED))
        first = standardize(result, data_1a, "X", n_resamples=200, seed=7)
        second = standardize(result, data_1a, "X", n_resamples=200, seed=7)
        assert first.risk_ratio.ci_low == second.risk_ratio.ci_low
        assert first.risk_ratio.ci_high == second.risk_ratio.ci_high
        assert first.risk_ratio.ci_low < first.risk_ratio.point < first.risk_ratio.ci_high
        assert first.n_failed == 0

    def test_exposure_must_be_binary(self, data_1a):
        result = fit(data_1a, ModelSpec(glm.LOGIT, ("X", "Z")))
        with pytest.raises(DomainError):
            standardize(result, data_1a, "Q")
        tilted = Dataset.from_aggregated(
            [({"X": 2.0, "Z": 0.0}, 3, 10), ({"X": 0.0, "Z": 0.0}, 2, 10)]
        )
        tilted_fit = fit(tilted, ModelSpec(glm.LOGIT, ("X",)))
        with pytest.raises(DomainError):
            standardize(tilted_fit, tilted, "X")
