"""Bivariate binomial mixed model for one meta-analysis.

Both arms of every study get a binomial likelihood whose logits carry
correlated normal random effects:

    x_i0 ~ Binomial(n_i0, expit(mu0 + v_i0))
    x_i1 ~ Binomial(n_i1, expit(mu1 + v_i1))
    (v_i0, v_i1) ~ Normal2(0, [[s0^2, r*s0*s1], [r*s0*s1, s1^2]])

The per-study integral is evaluated with tensor-product Gauss-Hermite
quadrature recentered at the integrand mode and rescaled by its curvature.
The fitted model yields marginal OR/RR/RD and effect curves conditional on
baseline risk, with Monte Carlo compatibility and prediction bands.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import minimize
from scipy.special import expit, gammaln, logit, logsumexp

from .errors import (
    DomainError,
    InsufficientStudiesError,
    NonConvergenceError,
    NumericalUnderflowError,
)
from .meta import StudyRow
from .tables import (
    EffectEstimate,
    EffectKind,
    back_transform,
    point_only_estimate,
    wald_estimate,
)

SQRT2 = math.sqrt(2.0)
SQRT_PI = math.sqrt(math.pi)

LOG_SIGMA_FLOOR = math.log(1e-6)
LOG_SIGMA_CAP = 20.0
ATANH_RHO_CAP = 12.0

DEFAULT_ORDER = 20
MARGINAL_ORDER = 40
GRAD_STEP = 1e-5
FIT_GTOL = 1e-5
FIT_MAXITER = 500


@dataclass(frozen=True)
class BglmmParams:
    """Population logits, random-effect scales, and their correlation."""

    mu0: float
    mu1: float
    sigma0: float
    sigma1: float
    rho: float

    def __post_init__(self):
        if self.sigma0 <= 0 or self.sigma1 <= 0:
            raise DomainError("random-effect scales must be positive")
        if not -1 < self.rho < 1:
            raise DomainError("correlation must lie in (-1, 1)")

    def to_unconstrained(self) -> np.ndarray:
        return np.array(
            [
                self.mu0,
                self.mu1,
                math.log(self.sigma0),
                math.log(self.sigma1),
                math.atanh(self.rho),
            ]
        )

    @staticmethod
    def from_unconstrained(vec: Sequence[float]) -> "BglmmParams":
        vec = np.asarray(vec, dtype=float)
        # the floors and caps keep the optimizer total near the boundaries
        ls0 = min(max(vec[2], LOG_SIGMA_FLOOR), LOG_SIGMA_CAP)
        ls1 = min(max(vec[3], LOG_SIGMA_FLOOR), LOG_SIGMA_CAP)
        zr = min(max(vec[4], -ATANH_RHO_CAP), ATANH_RHO_CAP)
        return BglmmParams(
            float(vec[0]),
            float(vec[1]),
            math.exp(ls0),
            math.exp(ls1),
            math.tanh(zr),
        )

    @property
    def at_boundary(self) -> bool:
        return (
            self.sigma0 <= math.exp(LOG_SIGMA_FLOOR) * (1 + 1e-9)
            or self.sigma1 <= math.exp(LOG_SIGMA_FLOOR) * (1 + 1e-9)
            or abs(self.rho) >= math.tanh(ATANH_RHO_CAP)
        )

    def to_dict(self) -> dict:
        return {
            "mu0": self.mu0,
            "mu1": self.mu1,
            "sigma0": self.sigma0,
            "sigma1": self.sigma1,
            "rho": self.rho,
        }


def _study_arrays(studies: Sequence[StudyRow]) -> tuple[np.ndarray, ...]:
    x0 = np.array([s.c_events for s in studies], dtype=float)
    n0 = np.array([s.c_total for s in studies], dtype=float)
    x1 = np.array([s.t_events for s in studies], dtype=float)
    n1 = np.array([s.t_total for s in studies], dtype=float)
    return x0, n0, x1, n1


def _binom_loglik(x, n, eta):
    """log pmf of Binomial(n, expit(eta)) without the combinatorial constant."""
    return x * eta - n * np.logaddexp(0.0, eta)


def _log_integrals(
    params: BglmmParams,
    x0: np.ndarray,
    n0: np.ndarray,
    x1: np.ndarray,
    n1: np.ndarray,
    order: int,
) -> np.ndarray:
    """Per-study log marginal likelihoods by mode-recentered quadrature."""
    mu0, mu1 = params.mu0, params.mu1
    s0, s1, rho = params.sigma0, params.sigma1, params.rho
    det = (s0 * s1) ** 2 * (1.0 - rho**2)
    prec_a = s1**2 / det
    prec_b = -rho * s0 * s1 / det
    prec_c = s0**2 / det
    log_norm = -math.log(2.0 * math.pi) - 0.5 * math.log(det)
    log_comb = (
        gammaln(n0 + 1) - gammaln(x0 + 1) - gammaln(n0 - x0 + 1)
        + gammaln(n1 + 1) - gammaln(x1 + 1) - gammaln(n1 - x1 + 1)
    )

    def log_f(u, w, xx0, nn0, xx1, nn1):
        quad = prec_a * u * u + 2.0 * prec_b * u * w + prec_c * w * w
        return (
            _binom_loglik(xx0, nn0, mu0 + u)
            + _binom_loglik(xx1, nn1, mu1 + w)
            + log_norm
            - 0.5 * quad
        )

    # damped Newton for the per-study integrand mode; the objective is
    # strictly concave, so this is a safeguard more than a necessity
    k = len(x0)
    u = np.zeros(k)
    w = np.zeros(k)
    current = log_f(u, w, x0, n0, x1, n1)
    tol = 1e-8 * (1.0 + n0 + n1)
    for _ in range(60):
        p0 = expit(mu0 + u)
        p1 = expit(mu1 + w)
        gu = x0 - n0 * p0 - (prec_a * u + prec_b * w)
        gw = x1 - n1 * p1 - (prec_b * u + prec_c * w)
        if np.all(np.abs(gu) < tol) and np.all(np.abs(gw) < tol):
            break
        h11 = n0 * p0 * (1 - p0) + prec_a
        h22 = n1 * p1 * (1 - p1) + prec_c
        det_h = h11 * h22 - prec_b**2
        du = (h22 * gu - prec_b * gw) / det_h
        dw = (h11 * gw - prec_b * gu) / det_h
        step = np.ones(k)
        for _ in range(40):
            u_try = u + step * du
            w_try = w + step * dw
            trial = log_f(u_try, w_try, x0, n0, x1, n1)
            worse = trial < current - 1e-12
            if not worse.any():
                break
            step[worse] *= 0.5
        else:
            step[worse] = 0.0
            u_try = u + step * du
            w_try = w + step * dw
            trial = log_f(u_try, w_try, x0, n0, x1, n1)
        u, w, current = u_try, w_try, trial

    # curvature at the mode -> Cholesky factor of the local Gaussian scale
    p0 = expit(mu0 + u)
    p1 = expit(mu1 + w)
    h11 = n0 * p0 * (1 - p0) + prec_a
    h22 = n1 * p1 * (1 - p1) + prec_c
    det_h = h11 * h22 - prec_b**2
    m11 = h22 / det_h
    m12 = -prec_b / det_h
    m22 = h11 / det_h
    l11 = np.sqrt(m11)
    l21 = m12 / l11
    l22 = np.sqrt(m22 - l21**2)

    nodes, weights = hermgauss(order)
    za = np.repeat(nodes, order)
    zb = np.tile(nodes, order)
    log_wt = (
        (np.log(weights)[:, None] + np.log(weights)[None, :]).ravel()
        + za**2
        + zb**2
    )
    uu = u[:, None] + SQRT2 * l11[:, None] * za[None, :]
    ww = w[:, None] + SQRT2 * (l21[:, None] * za[None, :] + l22[:, None] * zb[None, :])
    values = log_f(
        uu, ww, x0[:, None], n0[:, None], x1[:, None], n1[:, None]
    ) + log_wt[None, :]
    result = (
        math.log(2.0)
        + np.log(l11 * l22)
        + logsumexp(values, axis=1)
        + log_comb
    )
    if not np.all(np.isfinite(result)):
        raise NumericalUnderflowError(
            "per-study integral underflowed in log-sum-exp form"
        )
    return result


def loglik(
    params: BglmmParams, studies: Sequence[StudyRow], order: int = DEFAULT_ORDER
) -> float:
    """Joint log-likelihood over studies (fsum, so order-independent)."""
    if order < 5:
        raise DomainError(f"quadrature order must be at least 5, got {order}")
    if len(studies) < 1:
        raise InsufficientStudiesError("need at least one study")
    x0, n0, x1, n1 = _study_arrays(studies)
    return math.fsum(_log_integrals(params, x0, n0, x1, n1, order).tolist())


def _central_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = GRAD_STEP
) -> np.ndarray:
    grad = np.empty(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = step
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return grad


def _numeric_hessian(
    f: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float = 1e-4
) -> np.ndarray:
    n = len(x)
    h = rel_step * np.maximum(1.0, np.abs(x))
    hessian = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        hessian[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            mixed = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
            hessian[i, j] = hessian[j, i] = mixed
    return hessian


@dataclass(frozen=True, eq=False)
class BglmmFit:
    """Fitted model: parameters, unconstrained-scale covariance, diagnostics."""

    params: BglmmParams
    covariance: np.ndarray | None
    loglik: float
    converged: bool
    order: int
    k: int
    grad_norm: float
    n_iterations: int

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "loglik": self.loglik,
            "converged": self.converged,
            "order": self.order,
            "k": self.k,
            "grad_norm": self.grad_norm,
            "iterations": self.n_iterations,
            "covariance": None
            if self.covariance is None
            else [list(row) for row in self.covariance],
            "at_boundary": self.params.at_boundary,
        }


def _starting_points(
    x0: np.ndarray, n0: np.ndarray, x1: np.ndarray, n1: np.ndarray
) -> list[np.ndarray]:
    # fsum keeps the starts (and hence the whole fit) bit-identical under
    # study reordering
    def pooled_logit(x, n):
        return logit((math.fsum(x) + 0.5) / (math.fsum(n) + 1.0))

    def spread(x, n):
        observed = logit((x + 0.5) / (n + 1.0))
        mean = math.fsum(observed) / len(observed)
        var = math.fsum((o - mean) ** 2 for o in observed) / max(len(observed) - 1, 1)
        return float(np.clip(math.sqrt(var), 0.05, 3.0))

    mu0 = float(pooled_logit(x0, n0))
    mu1 = float(pooled_logit(x1, n1))
    ls0 = math.log(spread(x0, n0))
    ls1 = math.log(spread(x1, n1))
    return [
        np.array([mu0, mu1, ls0, ls1, math.atanh(r)]) for r in (-0.5, 0.0, 0.5)
    ]


def fit(studies: Sequence[StudyRow], order: int = DEFAULT_ORDER) -> BglmmFit:
    """Maximum likelihood over unconstrained coordinates.

    Quasi-Newton (BFGS) with central-difference gradients from three
    deterministic moment-based starts; the covariance is the inverse numeric
    Hessian at the best converged optimum. A singular Hessian is reported by
    returning the fit with ``covariance=None`` rather than by failing.
    """
    k = len(studies)
    if k < 5:
        raise InsufficientStudiesError(f"need at least 5 studies, got {k}")
    if k < 10:
        warnings.warn(f"only {k} studies; estimates will be fragile", stacklevel=2)
    x0, n0, x1, n1 = _study_arrays(studies)

    def negloglik(vec: np.ndarray) -> float:
        params = BglmmParams.from_unconstrained(vec)
        return -math.fsum(_log_integrals(params, x0, n0, x1, n1, order).tolist())

    def neg_grad(vec: np.ndarray) -> np.ndarray:
        return _central_gradient(negloglik, vec)

    best = None
    for start in _starting_points(x0, n0, x1, n1):
        result = minimize(
            negloglik,
            start,
            jac=neg_grad,
            method="BFGS",
            options={"maxiter": FIT_MAXITER, "gtol": FIT_GTOL},
        )
        grad_norm = float(np.max(np.abs(result.jac)))
        converged = grad_norm < FIT_GTOL
        if converged and (best is None or result.fun < best[0].fun):
            best = (result, grad_norm)
    if best is None:
        raise NonConvergenceError(
            f"no start converged within {FIT_MAXITER} iterations"
        )
    result, grad_norm = best

    covariance = None
    hessian = _numeric_hessian(negloglik, result.x)
    hessian = 0.5 * (hessian + hessian.T)
    try:
        eigenvalues = np.linalg.eigvalsh(hessian)
        if np.all(eigenvalues > 0):
            covariance = np.linalg.inv(hessian)
        else:
            warnings.warn(
                "Hessian at the optimum is not positive definite; "
                "covariance unavailable",
                stacklevel=2,
            )
    except np.linalg.LinAlgError:
        warnings.warn("Hessian inversion failed; covariance unavailable", stacklevel=2)

    return BglmmFit(
        params=BglmmParams.from_unconstrained(result.x),
        covariance=covariance,
        loglik=-float(result.fun),
        converged=True,
        order=order,
        k=k,
        grad_norm=grad_norm,
        n_iterations=int(result.nit),
    )


def marginal_risk(mu: float, sigma: float, order: int = MARGINAL_ORDER) -> float:
    """E[expit(mu + sigma Z)] for standard normal Z, by Gauss-Hermite."""
    nodes, weights = hermgauss(order)
    return float(weights @ expit(mu + SQRT2 * sigma * nodes) / SQRT_PI)


def _measure_from_risks(kind: EffectKind, p1, p0):
    if kind is EffectKind.OR:
        return (p1 / (1.0 - p1)) / (p0 / (1.0 - p0))
    if kind is EffectKind.RR:
        return p1 / p0
    return p1 - p0


def marginal(
    fit_result: BglmmFit,
    kind: EffectKind,
    level: float = 0.95,
    order: int = MARGINAL_ORDER,
) -> EffectEstimate:
    """Population-averaged measure from the two marginal risks.

    The interval is a delta-method Wald interval through the quadrature
    (log scale for ratio measures). Without a covariance the point estimate
    is returned alone.
    """
    if not fit_result.converged:
        raise DomainError("marginal effects require a converged fit")

    def transformed(vec: np.ndarray) -> float:
        params = BglmmParams.from_unconstrained(vec)
        p1 = marginal_risk(params.mu1, params.sigma1, order)
        p0 = marginal_risk(params.mu0, params.sigma0, order)
        value = _measure_from_risks(kind, p1, p0)
        return math.log(value) if kind.is_ratio else value

    vec = fit_result.params.to_unconstrained()
    point_t = transformed(vec)
    if fit_result.covariance is None:
        return point_only_estimate(kind, back_transform(kind, point_t), level)
    gradient = _central_gradient(transformed, vec)
    variance = float(gradient @ fit_result.covariance @ gradient)
    return wald_estimate(kind, point_t, math.sqrt(max(variance, 0.0)), level)


@dataclass(frozen=True)
class ConditionalCurve:
    """A measure as a function of baseline risk, with pointwise bands.

    Bands are percentile envelopes over seeded parameter draws; prediction
    bands add a fresh treatment-arm random effect per draw. Both include the
    point value, and the prediction band contains the compatibility band.
    Bands are None when the fit carries no covariance.
    """

    kind: EffectKind
    level: float
    grid: tuple[float, ...]
    values: tuple[float, ...]
    comp_low: tuple[float, ...] | None
    comp_high: tuple[float, ...] | None
    pred_low: tuple[float, ...] | None
    pred_high: tuple[float, ...] | None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "level": self.level,
            "grid": list(self.grid),
            "values": list(self.values),
            "comp_low": None if self.comp_low is None else list(self.comp_low),
            "comp_high": None if self.comp_high is None else list(self.comp_high),
            "pred_low": None if self.pred_low is None else list(self.pred_low),
            "pred_high": None if self.pred_high is None else list(self.pred_high),
        }


def _conditional_treatment_risk(
    mu0, mu1, sigma0, sigma1, rho, p0_grid, order: int, plugin: bool
):
    """E[expit(mu1 + v1) | v0 = logit(p0) - mu0]; parameters broadcast as rows."""
    nu0 = logit(p0_grid)[None, :] - mu0[:, None]
    cmean = mu1[:, None] + (rho * sigma1 / sigma0)[:, None] * nu0
    csd = (sigma1 * np.sqrt(1.0 - rho**2))[:, None]
    if plugin:
        return expit(cmean)
    nodes, weights = hermgauss(order)
    p1 = np.zeros_like(cmean)
    for node, weight in zip(nodes, weights):
        p1 += weight * expit(cmean + SQRT2 * csd * node)
    return p1 / SQRT_PI


def _params_matrix(draws: np.ndarray) -> tuple[np.ndarray, ...]:
    mu0 = draws[:, 0]
    mu1 = draws[:, 1]
    sigma0 = np.exp(np.clip(draws[:, 2], LOG_SIGMA_FLOOR, LOG_SIGMA_CAP))
    sigma1 = np.exp(np.clip(draws[:, 3], LOG_SIGMA_FLOOR, LOG_SIGMA_CAP))
    rho = np.tanh(np.clip(draws[:, 4], -ATANH_RHO_CAP, ATANH_RHO_CAP))
    return mu0, mu1, sigma0, sigma1, rho


def conditional_curve(
    fit_result: BglmmFit,
    kind: EffectKind,
    grid: Sequence[float],
    level: float = 0.95,
    draws: int = 4000,
    seed: int = 0,
    order: int = MARGINAL_ORDER,
    plugin: bool = False,
) -> ConditionalCurve:
    """Measure versus baseline risk with compatibility and prediction bands.

    ``plugin=True`` uses expit of the conditional mean logit instead of the
    conditional mean risk.
    """
    if not fit_result.converged:
        raise DomainError("conditional curves require a converged fit")
    grid = np.asarray(list(grid), dtype=float)
    if len(grid) == 0 or np.any(grid <= 0) or np.any(grid >= 1):
        raise DomainError("grid values must lie strictly inside (0, 1)")

    vec = fit_result.params.to_unconstrained()
    mu0, mu1, sigma0, sigma1, rho = _params_matrix(vec[None, :])
    p1 = _conditional_treatment_risk(
        mu0, mu1, sigma0, sigma1, rho, grid, order, plugin
    )
    values = _measure_from_risks(kind, p1, grid[None, :])[0]

    if fit_result.covariance is None:
        return ConditionalCurve(
            kind, level, tuple(grid), tuple(values), None, None, None, None
        )

    rng = np.random.default_rng(seed)
    scale = np.linalg.cholesky(fit_result.covariance)
    samples = vec[None, :] + rng.standard_normal((draws, 5)) @ scale.T
    mu0, mu1, sigma0, sigma1, rho = _params_matrix(samples)
    p1_draws = _conditional_treatment_risk(
        mu0, mu1, sigma0, sigma1, rho, grid, order, plugin
    )
    curve_draws = _measure_from_risks(kind, p1_draws, grid[None, :])

    nu0 = logit(grid)[None, :] - mu0[:, None]
    cmean = mu1[:, None] + (rho * sigma1 / sigma0)[:, None] * nu0
    csd = (sigma1 * np.sqrt(1.0 - rho**2))[:, None]
    p1_new = expit(cmean + csd * rng.standard_normal(p1_draws.shape))
    pred_draws = _measure_from_risks(kind, p1_new, grid[None, :])

    alpha = 1.0 - level
    comp_low = np.minimum(np.quantile(curve_draws, alpha / 2, axis=0), values)
    comp_high = np.maximum(np.quantile(curve_draws, 1 - alpha / 2, axis=0), values)
    pred_low = np.minimum(np.quantile(pred_draws, alpha / 2, axis=0), comp_low)
    pred_high = np.maximum(np.quantile(pred_draws, 1 - alpha / 2, axis=0), comp_high)
    return ConditionalCurve(
        kind,
        level,
        tuple(grid),
        tuple(values),
        tuple(comp_low),
        tuple(comp_high),
        tuple(pred_low),
        tuple(pred_high),
    )
