"""Two-stage random-effects meta-analysis of binary outcomes.

Stage one turns each study's 2x2 counts into a transformed-scale estimate
and variance; stage two pools with inverse-variance weights under a
fixed-effect, DerSimonian-Laird, or REML between-study variance. Sums use
math.fsum so results are bit-identical under any study ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from scipy.optimize import minimize_scalar

from .errors import DataValidationError, DomainError, InsufficientStudiesError
from .tables import (
    EffectEstimate,
    EffectKind,
    TwoByTwoTable,
    correct_zero_cells,
    effect,
    wald_estimate,
)

REML_XATOL = 1e-10


class PoolingMethod(str, Enum):
    FE = "fe"
    DL = "dl"
    REML = "reml"


@dataclass(frozen=True)
class StudyRow:
    """One study's two arms: treated (t_) and control (c_) events/totals."""

    meta_id: str
    study_id: str
    t_events: float
    t_total: float
    c_events: float
    c_total: float

    def __post_init__(self):
        if not self.meta_id or not self.study_id:
            raise DataValidationError("meta_id and study_id must be non-empty")
        for events, total, arm in (
            (self.t_events, self.t_total, "treated"),
            (self.c_events, self.c_total, "control"),
        ):
            if total <= 0:
                raise DataValidationError(
                    f"{arm} total must be positive in {self.meta_id}/{self.study_id}"
                )
            if not 0 <= events <= total:
                raise DataValidationError(
                    f"{arm} events must lie in [0, total] in "
                    f"{self.meta_id}/{self.study_id}"
                )

    def to_table(self) -> TwoByTwoTable:
        return TwoByTwoTable(
            self.t_events,
            self.t_total - self.t_events,
            self.c_events,
            self.c_total - self.c_events,
        )


def study_effects(
    studies: Sequence[StudyRow], kind: EffectKind, correction: float = 0.5
) -> list[tuple[float, float]]:
    """Per-study transformed-scale estimates and variances.

    The zero-cell correction applies per table, only where triggered.
    """
    out = []
    for study in studies:
        table = correct_zero_cells(study.to_table(), correction)
        estimate = effect(table, kind)
        out.append((estimate.point_t, estimate.se_t**2))
    return out


@dataclass(frozen=True)
class ReMetaFit:
    """Pooled random-effects result plus the stage-one inputs."""

    kind: EffectKind
    y: tuple[float, ...]
    v: tuple[float, ...]
    tau2: float
    method: PoolingMethod
    pooled: EffectEstimate
    q: float
    k: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "method": self.method.value,
            "k": self.k,
            "tau2": self.tau2,
            "q": self.q,
            "pooled": self.pooled.to_dict(),
            "study_y": list(self.y),
            "study_v": list(self.v),
        }


def _weighted_mean(y: Sequence[float], w: Sequence[float]) -> float:
    return math.fsum(wi * yi for wi, yi in zip(w, y)) / math.fsum(w)


def restricted_loglik(tau2: float, y: Sequence[float], v: Sequence[float]) -> float:
    """REML objective for the between-study variance (up to a constant)."""
    if tau2 < 0:
        raise DomainError("tau2 must be nonnegative")
    w = [1.0 / (vi + tau2) for vi in v]
    mu = _weighted_mean(y, w)
    return (
        -0.5 * math.fsum(math.log(vi + tau2) for vi in v)
        - 0.5 * math.log(math.fsum(w))
        - 0.5 * math.fsum(wi * (yi - mu) ** 2 for wi, yi in zip(w, y))
    )


def _dl_tau2(y: Sequence[float], v: Sequence[float]) -> tuple[float, float]:
    """DerSimonian-Laird tau^2 and the Q statistic."""
    w = [1.0 / vi for vi in v]
    ybar = _weighted_mean(y, w)
    q = math.fsum(wi * (yi - ybar) ** 2 for wi, yi in zip(w, y))
    sw = math.fsum(w)
    c = sw - math.fsum(wi * wi for wi in w) / sw
    k = len(y)
    tau2 = max(0.0, (q - (k - 1)) / c) if c > 0 else 0.0
    return tau2, q


def _reml_tau2(y: Sequence[float], v: Sequence[float]) -> float:
    w = [1.0 / vi for vi in v]
    ybar = _weighted_mean(y, w)
    upper = 10.0 * max(vi + (yi - ybar) ** 2 for yi, vi in zip(y, v))
    result = minimize_scalar(
        lambda t: -restricted_loglik(t, y, v),
        bounds=(0.0, upper),
        method="bounded",
        options={"xatol": REML_XATOL},
    )
    # compare the interior optimum against both boundaries
    candidates = [0.0, float(result.x), upper]
    return max(candidates, key=lambda t: restricted_loglik(t, y, v))


def pool(
    effects: Sequence[tuple[float, float]],
    method: PoolingMethod,
    kind: EffectKind,
    level: float = 0.95,
) -> ReMetaFit:
    """Pool transformed-scale (estimate, variance) pairs.

    FE fixes tau^2 at zero; DL uses the moment estimator; REML maximizes the
    restricted log-likelihood by bounded scalar search.
    """
    if len(effects) < 2:
        raise InsufficientStudiesError(
            f"pooling needs at least 2 studies, got {len(effects)}"
        )
    y = [float(e[0]) for e in effects]
    v = [float(e[1]) for e in effects]
    if any(vi <= 0 for vi in v):
        raise DomainError("all study variances must be positive")

    method = PoolingMethod(method)
    dl_tau2, q = _dl_tau2(y, v)
    if method is PoolingMethod.FE:
        tau2 = 0.0
    elif method is PoolingMethod.DL:
        tau2 = dl_tau2
    else:
        tau2 = _reml_tau2(y, v)

    w_star = [1.0 / (vi + tau2) for vi in v]
    mu = _weighted_mean(y, w_star)
    se = math.sqrt(1.0 / math.fsum(w_star))
    pooled = wald_estimate(kind, mu, se, level)
    return ReMetaFit(
        kind=kind,
        y=tuple(y),
        v=tuple(v),
        tau2=tau2,
        method=method,
        pooled=pooled,
        q=q,
        k=len(y),
    )


def two_stage(
    studies: Sequence[StudyRow],
    kind: EffectKind,
    method: PoolingMethod = PoolingMethod.REML,
    correction: float = 0.5,
    level: float = 0.95,
) -> ReMetaFit:
    """Per-study estimation followed by random-effects pooling."""
    return pool(study_effects(studies, kind, correction), method, kind, level)
