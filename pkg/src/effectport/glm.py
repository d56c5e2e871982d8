"""Binomial generalized linear models with logit and log links.

Fitting is iteratively reweighted least squares with step-halving; the log
link additionally halves steps until every fitted probability stays below
one. Grouped (events/trials) and row-expanded data aggregate to the same
canonical covariate patterns, so both representations give identical fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import chi2, norm

from .errors import (
    BoundaryError,
    DataValidationError,
    DomainError,
    MissingTermError,
    NestingError,
    RankDeficientError,
    SeparationError,
)
from .tables import EffectEstimate, EffectKind

LOGIT = "logit"
LOG = "log"
LINKS = (LOGIT, LOG)

MAX_ITER = 100
DEVIANCE_RTOL = 1e-10
GRADIENT_TOL = 1e-8
SEPARATION_BETA = 30.0
PROB_CAP = 1.0 - 1e-10
INTERCEPT = "(Intercept)"

#: Advisory attached to every likelihood-ratio test result.
LRT_NOTE = (
    "Term selection by p-value is discouraged: dropping a term because its "
    "p-value is large biases both marginal and subgroup estimates."
)


def _freeze(array: np.ndarray) -> np.ndarray:
    out = np.asarray(array, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary-outcome data aggregated to one row per covariate pattern.

    Patterns are stored in a canonical (sorted) order so that fits do not
    depend on input row order, and arrays are read-only so datasets can be
    shared freely.
    """

    names: tuple[str, ...]
    patterns: np.ndarray  # (m, p) covariate values
    events: np.ndarray  # (m,) weighted event counts
    trials: np.ndarray  # (m,) weighted trial counts

    def __post_init__(self):
        object.__setattr__(self, "patterns", _freeze(np.atleast_2d(self.patterns)))
        object.__setattr__(self, "events", _freeze(self.events))
        object.__setattr__(self, "trials", _freeze(self.trials))
        if len(set(self.names)) != len(self.names):
            raise DataValidationError("covariate names must be unique")
        if self.patterns.shape != (len(self.trials), len(self.names)):
            raise DataValidationError("pattern matrix shape does not match names")
        if np.any(self.trials <= 0):
            raise DataValidationError("trials must be positive")
        if np.any(self.events < 0) or np.any(self.events > self.trials):
            raise DataValidationError("events must lie in [0, trials]")

    @classmethod
    def from_aggregated(
        cls, records: Iterable[tuple[Mapping[str, float], float, float]]
    ) -> "Dataset":
        """Build from (covariates, events, trials) records."""
        names: tuple[str, ...] | None = None
        merged: dict[tuple[float, ...], list[float]] = {}
        for covariates, events, trials in records:
            if names is None:
                names = tuple(covariates)
            if tuple(covariates) != names:
                raise DataValidationError(
                    "all records must share the same covariate names"
                )
            key = tuple(float(covariates[n]) for n in names)
            cell = merged.setdefault(key, [0.0, 0.0])
            cell[0] += float(events)
            cell[1] += float(trials)
        if names is None:
            raise DataValidationError("no records supplied")
        keys = sorted(merged)
        return cls(
            names=names,
            patterns=np.array(keys, dtype=float),
            events=np.array([merged[k][0] for k in keys]),
            trials=np.array([merged[k][1] for k in keys]),
        )

    @classmethod
    def from_rows(cls, rows: Iterable[Sequence]) -> "Dataset":
        """Build from (y, covariates[, weight]) rows with y in {0, 1}."""

        def as_record(row):
            if len(row) == 2:
                y, covariates = row
                weight = 1.0
            elif len(row) == 3:
                y, covariates, weight = row
            else:
                raise DataValidationError(
                    "rows must be (y, covariates) or (y, covariates, weight)"
                )
            if y not in (0, 1):
                raise DataValidationError(f"outcome must be 0 or 1, got {y!r}")
            if weight <= 0:
                raise DataValidationError(f"weights must be positive, got {weight!r}")
            return covariates, float(y) * weight, float(weight)

        return cls.from_aggregated(as_record(row) for row in rows)

    @property
    def n_patterns(self) -> int:
        return len(self.trials)

    @property
    def total_trials(self) -> float:
        return float(self.trials.sum())

    def column(self, name: str) -> np.ndarray:
        try:
            return self.patterns[:, self.names.index(name)]
        except ValueError:
            raise DomainError(f"unknown covariate {name!r}") from None

    def subset(self, name: str, value: float) -> "Dataset":
        """Restrict to patterns where covariate ``name`` equals ``value``."""
        mask = self.column(name) == value
        if not mask.any():
            raise DataValidationError(f"no patterns with {name} == {value!r}")
        return Dataset(
            self.names, self.patterns[mask], self.events[mask], self.trials[mask]
        )

    def equals(self, other: "Dataset") -> bool:
        return (
            self.names == other.names
            and np.array_equal(self.patterns, other.patterns)
            and np.array_equal(self.events, other.events)
            and np.array_equal(self.trials, other.trials)
        )


@dataclass(frozen=True)
class ModelSpec:
    """Link plus ordered terms; the intercept is always included.

    Terms are covariate names or pairwise products written "A:B"; product
    factors must also appear as main effects.
    """

    link: str
    terms: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if self.link not in LINKS:
            raise DomainError(f"link must be one of {LINKS}, got {self.link!r}")
        seen = set()
        mains = {t for t in self.terms if ":" not in t}
        for term in self.terms:
            key = frozenset(term.split(":")) if ":" in term else term
            if key in seen:
                raise DomainError(f"duplicate term {term!r}")
            seen.add(key)
            if ":" in term:
                factors = term.split(":")
                if len(factors) != 2:
                    raise DomainError(f"only pairwise products are supported: {term!r}")
                missing = [f for f in factors if f not in mains]
                if missing:
                    raise DomainError(
                        f"product {term!r} needs main effects for {missing}"
                    )


def _design_matrix(
    patterns: np.ndarray, names: tuple[str, ...], terms: tuple[str, ...]
) -> np.ndarray:
    def col(name: str) -> np.ndarray:
        try:
            return patterns[:, names.index(name)]
        except ValueError:
            raise DomainError(f"unknown covariate {name!r} in model terms") from None

    columns = [np.ones(len(patterns))]
    for term in terms:
        if ":" in term:
            f1, f2 = term.split(":")
            columns.append(col(f1) * col(f2))
        else:
            columns.append(col(term))
    return np.column_stack(columns)


def _inverse_link(link: str, eta: np.ndarray) -> np.ndarray:
    return expit(eta) if link == LOGIT else np.exp(eta)


def _deviance(events: np.ndarray, trials: np.ndarray, mu: np.ndarray) -> float:
    """Binomial deviance against the saturated per-pattern fit."""
    with np.errstate(divide="ignore", invalid="ignore"):
        p_hat = events / trials
        term1 = np.where(events > 0, events * np.log(p_hat / mu), 0.0)
        term0 = np.where(
            trials - events > 0,
            (trials - events) * np.log((1 - p_hat) / (1 - mu)),
            0.0,
        )
    value = 2.0 * float(np.sum(term1) + np.sum(term0))
    return value


def _loglik(events: np.ndarray, trials: np.ndarray, mu: np.ndarray) -> float:
    """Weighted Bernoulli log-likelihood (no binomial coefficient)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        term1 = np.where(events > 0, events * np.log(mu), 0.0)
        term0 = np.where(trials - events > 0, (trials - events) * np.log1p(-mu), 0.0)
    return float(np.sum(term1) + np.sum(term0))


def _gradient(
    link: str,
    design: np.ndarray,
    events: np.ndarray,
    trials: np.ndarray,
    mu: np.ndarray,
) -> np.ndarray:
    residual = events - trials * mu
    if link == LOG:
        residual = residual / (1.0 - mu)
    return design.T @ residual


def log_likelihood(data: Dataset, spec: ModelSpec, beta: np.ndarray) -> float:
    """Log-likelihood at an arbitrary coefficient vector (for diagnostics)."""
    design = _design_matrix(data.patterns, data.names, spec.terms)
    mu = _inverse_link(spec.link, design @ np.asarray(beta, dtype=float))
    mu = np.clip(mu, 1e-300, PROB_CAP)
    return _loglik(data.events, data.trials, mu)


def score(data: Dataset, spec: ModelSpec, beta: np.ndarray) -> np.ndarray:
    """Analytic gradient of the log-likelihood at ``beta``."""
    design = _design_matrix(data.patterns, data.names, spec.terms)
    mu = _inverse_link(spec.link, design @ np.asarray(beta, dtype=float))
    mu = np.clip(mu, 1e-300, PROB_CAP)
    return _gradient(spec.link, design, data.events, data.trials, mu)


@dataclass(frozen=True, eq=False)
class GlmFit:
    """Maximum-likelihood fit of a binomial GLM."""

    spec: ModelSpec
    names: tuple[str, ...]  # INTERCEPT first, then the terms in order
    beta: np.ndarray
    cov: np.ndarray
    deviance: float
    loglik: float
    iterations: int
    converged: bool
    deviance_trace: tuple[float, ...]
    data: Dataset

    def __post_init__(self):
        object.__setattr__(self, "beta", _freeze(self.beta))
        object.__setattr__(self, "cov", _freeze(self.cov))

    def _index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise MissingTermError(f"term {name!r} is not in the model") from None

    def coef(self, name: str) -> float:
        return float(self.beta[self._index(name)])

    def se(self, name: str) -> float:
        return float(math.sqrt(self.cov[self._index(name), self._index(name)]))

    def exp_coef(self, name: str) -> float:
        return math.exp(self.coef(name))

    def wald_interval(self, name: str, level: float = 0.95) -> tuple[float, float]:
        """Exponentiated Wald interval for one coefficient."""
        z = norm.ppf(0.5 + level / 2.0)
        b, s = self.coef(name), self.se(name)
        return math.exp(b - z * s), math.exp(b + z * s)

    def fitted_probabilities(self) -> np.ndarray:
        return predicted_risks(self, self.data)

    def coefficient_table(self, level: float = 0.95) -> list[dict]:
        rows = []
        for name in self.names:
            lo, hi = self.wald_interval(name, level)
            rows.append(
                {
                    "term": name,
                    "estimate": self.coef(name),
                    "se": self.se(name),
                    "exp_estimate": self.exp_coef(name),
                    "ci_low": lo,
                    "ci_high": hi,
                    "level": level,
                }
            )
        return rows

    def to_dict(self, level: float = 0.95) -> dict:
        return {
            "link": self.spec.link,
            "terms": list(self.spec.terms),
            "coefficients": self.coefficient_table(level),
            "deviance": self.deviance,
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _start_values(data: Dataset, link: str, n_coef: int) -> np.ndarray:
    beta = np.zeros(n_coef)
    if link == LOG:
        mean_y = data.events.sum() / data.trials.sum()
        beta[0] = math.log(max(mean_y, 1e-8)) - 1e-3
    return beta


def fit(data: Dataset, spec: ModelSpec) -> GlmFit:
    """Fit a binomial GLM by IRLS with step-halving.

    Convergence requires a relative deviance change below 1e-10 or a score
    max-norm below 1e-8, within 100 iterations. Raises RankDeficientError
    for collinear designs, SeparationError for diverging logit estimates,
    and BoundaryError when a log-link maximum sits on the probability
    boundary (the boundary fit rides along on the exception).
    """
    design = _design_matrix(data.patterns, data.names, spec.terms)
    n_coef = design.shape[1]
    if np.linalg.matrix_rank(design) < n_coef:
        raise RankDeficientError(
            f"design matrix with terms {spec.terms} is rank deficient"
        )
    events, trials = data.events, data.trials
    names = (INTERCEPT,) + spec.terms

    beta = _start_values(data, spec.link, n_coef)
    mu = np.clip(_inverse_link(spec.link, design @ beta), 1e-300, PROB_CAP)
    dev = _deviance(events, trials, mu)
    trace = [dev]
    converged = False
    boundary_stalled = False
    iteration = 0

    for iteration in range(1, MAX_ITER + 1):
        p_hat = events / trials
        if spec.link == LOGIT:
            weights = trials * mu * (1 - mu)
            working = design @ beta + (p_hat - mu) / (mu * (1 - mu))
        else:
            weights = trials * mu / (1 - mu)
            working = design @ beta + (p_hat - mu) / mu
        wx = design * weights[:, None]
        try:
            proposal = np.linalg.solve(design.T @ wx, wx.T @ working)
        except np.linalg.LinAlgError:
            proposal, *_ = np.linalg.lstsq(design.T @ wx, wx.T @ working, rcond=None)
        delta = proposal - beta

        # step-halving: keep log-link probabilities feasible and the
        # deviance non-increasing
        step = 1.0
        accepted = False
        while step >= 1e-10:
            candidate = beta + step * delta
            eta_new = design @ candidate
            if spec.link == LOG and np.any(eta_new > math.log(PROB_CAP)):
                step /= 2.0
                continue
            mu_new = np.clip(_inverse_link(spec.link, eta_new), 1e-300, PROB_CAP)
            dev_new = _deviance(events, trials, mu_new)
            if math.isfinite(dev_new) and dev_new <= dev + 1e-12:
                accepted = True
                break
            step /= 2.0

        if not accepted:
            grad = _gradient(spec.link, design, events, trials, mu)
            if float(np.max(np.abs(grad))) < GRADIENT_TOL:
                converged = True
            else:
                boundary_stalled = spec.link == LOG
            break

        beta, mu, dev_old = candidate, mu_new, dev
        dev = dev_new
        trace.append(dev)
        grad = _gradient(spec.link, design, events, trials, mu)
        grad_norm = float(np.max(np.abs(grad)))

        if spec.link == LOGIT and np.max(np.abs(beta)) > SEPARATION_BETA:
            if grad_norm >= GRADIENT_TOL:
                raise SeparationError(
                    "logit estimates diverging (|beta| > "
                    f"{SEPARATION_BETA:g}); data are likely separated"
                )
        if abs(dev_old - dev) < DEVIANCE_RTOL * (abs(dev) + DEVIANCE_RTOL):
            converged = True
            break
        if grad_norm < GRADIENT_TOL:
            converged = True
            break

    weights = (
        trials * mu * (1 - mu) if spec.link == LOGIT else trials * mu / (1 - mu)
    )
    info = design.T @ (design * weights[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.full((n_coef, n_coef), np.nan)

    result = GlmFit(
        spec=spec,
        names=names,
        beta=beta,
        cov=cov,
        deviance=dev,
        loglik=_loglik(events, trials, mu),
        iterations=iteration,
        converged=converged,
        deviance_trace=tuple(trace),
        data=data,
    )
    if boundary_stalled:
        near_cap = bool(np.any(mu >= PROB_CAP * (1 - 1e-8)))
        raise BoundaryError(
            "log-link maximum lies on the fitted-probability boundary"
            + ("" if near_cap else " (step-halving stalled)"),
            fit=result,
        )
    return result


def stratum_effect(
    fit_result: GlmFit, term: str, modifier: str, modifier_level: float
) -> float:
    """Exponentiated effect of ``term`` at a given level of ``modifier``.

    With a product term in the model this is exp(b_term + level * b_product);
    without one the product coefficient is zero and the main effect returns.
    """
    names = fit_result.names
    if term not in names:
        raise MissingTermError(f"term {term!r} is not in the model")
    if modifier not in names:
        raise MissingTermError(f"modifier {modifier!r} is not in the model")
    beta = fit_result.coef(term)
    for candidate in (f"{term}:{modifier}", f"{modifier}:{term}"):
        if candidate in names:
            beta += modifier_level * fit_result.coef(candidate)
            break
    return math.exp(beta)


@dataclass(frozen=True)
class LrtResult:
    statistic: float
    df: int
    p: float
    note: str = LRT_NOTE

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "df": self.df, "p": self.p, "note": self.note}


def lrt(full: GlmFit, reduced: GlmFit) -> LrtResult:
    """Likelihood-ratio test of nested binomial GLMs on the same data."""
    if full.spec.link != reduced.spec.link:
        raise NestingError("models use different links")
    if not set(reduced.spec.terms) <= set(full.spec.terms):
        raise NestingError("reduced terms are not a subset of the full terms")
    if not full.data.equals(reduced.data):
        raise NestingError("models were fitted on different data")
    statistic = max(0.0, 2.0 * (full.loglik - reduced.loglik))
    df = len(full.spec.terms) - len(reduced.spec.terms)
    p = 1.0 if df == 0 else float(chi2.sf(statistic, df))
    return LrtResult(statistic=statistic, df=df, p=p)


def predicted_risks(
    fit_result: GlmFit,
    data: Dataset,
    override: Mapping[str, float] | None = None,
) -> np.ndarray:
    """Per-pattern fitted risks, optionally with covariates forced to values.

    Product terms are rebuilt from the overridden covariates, so forcing an
    exposure also moves every product involving it.
    """
    patterns = np.array(data.patterns, dtype=float)
    if override:
        for name, value in override.items():
            try:
                patterns[:, data.names.index(name)] = value
            except ValueError:
                raise DomainError(f"unknown covariate {name!r}") from None
    design = _design_matrix(patterns, data.names, fit_result.spec.terms)
    return np.clip(
        _inverse_link(fit_result.spec.link, design @ fit_result.beta), 1e-300, PROB_CAP
    )


@dataclass(frozen=True)
class StandardizedEffects:
    """Population-averaged measures from risks standardized to the data."""

    risk_exposed: float
    risk_unexposed: float
    odds_ratio: EffectEstimate
    risk_ratio: EffectEstimate
    risk_difference: EffectEstimate
    n_resamples: int
    n_failed: int

    def to_dict(self) -> dict:
        return {
            "risk_exposed": self.risk_exposed,
            "risk_unexposed": self.risk_unexposed,
            "or": self.odds_ratio.to_dict(),
            "rr": self.risk_ratio.to_dict(),
            "rd": self.risk_difference.to_dict(),
            "n_resamples": self.n_resamples,
            "n_failed": self.n_failed,
        }


def _standardized_risks(
    fit_result: GlmFit, data: Dataset, exposure: str
) -> tuple[float, float]:
    weights = data.trials / data.trials.sum()
    r1 = float(np.sum(weights * predicted_risks(fit_result, data, {exposure: 1.0})))
    r0 = float(np.sum(weights * predicted_risks(fit_result, data, {exposure: 0.0})))
    return r1, r0


def _measures_from_risks(r1: float, r0: float) -> dict[EffectKind, float]:
    return {
        EffectKind.OR: (r1 / (1 - r1)) / (r0 / (1 - r0)),
        EffectKind.RR: r1 / r0,
        EffectKind.RD: r1 - r0,
    }


def standardize(
    fit_result: GlmFit,
    data: Dataset,
    exposure: str,
    n_resamples: int = 2000,
    seed: int = 0,
    level: float = 0.95,
) -> StandardizedEffects:
    """Marginal OR, RR, and RD by averaging fitted risks over the data.

    Every pattern is predicted with the exposure forced to 1 and to 0, the
    predictions are averaged over the observed (weighted) covariate
    distribution, and the three measures are formed from the two averaged
    risks. Intervals come from a seeded nonparametric bootstrap of the
    observation units (percentile method); the bootstrap requires integral
    total weight.
    """
    if exposure not in data.names:
        raise DomainError(f"exposure {exposure!r} is not a covariate")
    values = data.column(exposure)
    if not set(np.unique(values)) <= {0.0, 1.0}:
        raise DomainError(f"exposure {exposure!r} must be binary (0/1)")

    r1, r0 = _standardized_risks(fit_result, data, exposure)
    points = _measures_from_risks(r1, r0)

    total = data.trials.sum()
    n_units = int(round(total))
    if abs(total - n_units) > 1e-9:
        raise DomainError("bootstrap requires an integral total weight")

    # resample units over (pattern, outcome) cells; this is the row bootstrap
    # of the expanded data
    cell_weights = np.concatenate([data.events, data.trials - data.events])
    probs = cell_weights / cell_weights.sum()
    rng = np.random.default_rng(seed)
    m = data.n_patterns

    replicates: dict[EffectKind, list[float]] = {k: [] for k in points}
    n_failed = 0
    for _ in range(n_resamples):
        counts = rng.multinomial(n_units, probs)
        boot_events = counts[:m].astype(float)
        boot_trials = boot_events + counts[m:]
        keep = boot_trials > 0
        try:
            boot_data = Dataset(
                data.names, data.patterns[keep], boot_events[keep], boot_trials[keep]
            )
            boot_fit = fit(boot_data, fit_result.spec)
            b1, b0 = _standardized_risks(boot_fit, boot_data, exposure)
            for kind, value in _measures_from_risks(b1, b0).items():
                replicates[kind].append(value)
        except Exception:
            n_failed += 1

    alpha = 1.0 - level
    estimates = {}
    for kind, point in points.items():
        reps = np.asarray(replicates[kind])
        if len(reps) >= 2:
            lo = float(np.quantile(reps, alpha / 2))
            hi = float(np.quantile(reps, 1 - alpha / 2))
            transformed = np.log(reps) if kind.is_ratio else reps
            se_t = float(np.std(transformed, ddof=1))
        else:
            lo = hi = point
            se_t = float("nan")
        estimates[kind] = EffectEstimate(
            kind,
            point,
            se_t,
            min(lo, point),
            max(hi, point),
            level,
            method="percentile",
        )
    return StandardizedEffects(
        risk_exposed=r1,
        risk_unexposed=r0,
        odds_ratio=estimates[EffectKind.OR],
        risk_ratio=estimates[EffectKind.RR],
        risk_difference=estimates[EffectKind.RD],
        n_resamples=n_resamples,
        n_failed=n_failed,
    )
