"""Effect measures for 2x2 tables.

Point estimates and Wald compatibility intervals for the odds ratio, risk
ratio, and risk difference, the +0.5 zero-cell correction, exact OR/RR
interconversion at a fixed baseline risk, and crude-versus-stratified
collapsibility reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from scipy.stats import norm

from .errors import DegenerateMarginError, DomainError, ZeroCellError

#: Relative tolerance for calling stratum and crude points equal.
COLLAPSE_RTOL = 1e-6


class EffectKind(str, Enum):
    """The three binary effect measures handled by this package."""

    OR = "or"
    RR = "rr"
    RD = "rd"

    @property
    def is_ratio(self) -> bool:
        return self is not EffectKind.RD

    @property
    def null(self) -> float:
        """The no-effect value: 1 for ratio measures, 0 for the difference."""
        return 0.0 if self is EffectKind.RD else 1.0


def transform(kind: EffectKind, point: float) -> float:
    """Map a point estimate to the scale its standard error lives on."""
    return math.log(point) if kind.is_ratio else point


def back_transform(kind: EffectKind, value: float) -> float:
    return math.exp(value) if kind.is_ratio else value


@dataclass(frozen=True)
class TwoByTwoTable:
    """Cell counts of one study: a/b exposed with/without event, c/d unexposed.

    Cells are nonnegative reals rather than integers so that the +0.5
    correction and cellwise pooling compose; CSV ingestion is where
    integrality of raw counts gets checked.
    """

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise DomainError(
                    f"cell {name} must be finite and nonnegative, got {value!r}"
                )

    @property
    def n_exposed(self) -> float:
        return self.a + self.b

    @property
    def n_unexposed(self) -> float:
        return self.c + self.d

    @property
    def risk_exposed(self) -> float:
        if self.n_exposed <= 0:
            raise DegenerateMarginError("exposed margin is zero")
        return self.a / self.n_exposed

    @property
    def baseline_risk(self) -> float:
        """Observed risk in the unexposed (control) arm, c / (c + d)."""
        if self.n_unexposed <= 0:
            raise DegenerateMarginError("unexposed margin is zero")
        return self.c / self.n_unexposed

    def has_zero_cell(self) -> bool:
        return 0.0 in (self.a, self.b, self.c, self.d)

    def pooled_with(self, other: "TwoByTwoTable") -> "TwoByTwoTable":
        """Cellwise sum, i.e. the crude table collapsing over strata."""
        return TwoByTwoTable(
            self.a + other.a, self.b + other.b, self.c + other.c, self.d + other.d
        )


def correct_zero_cells(table: TwoByTwoTable, increment: float = 0.5) -> TwoByTwoTable:
    """Add ``increment`` to all four cells if any cell is zero; else unchanged."""
    if increment <= 0:
        raise DomainError(f"increment must be positive, got {increment!r}")
    if not table.has_zero_cell():
        return table
    return TwoByTwoTable(
        table.a + increment,
        table.b + increment,
        table.c + increment,
        table.d + increment,
    )


@dataclass(frozen=True)
class EffectEstimate:
    """One effect measure with its transformed-scale SE and interval.

    ``se_t`` is on the log scale for OR/RR and the identity scale for RD.
    ``method`` records how the interval was built: "wald" intervals are
    symmetric on the transformed scale, "percentile" ones come from a
    bootstrap, "point_only" carries no interval (NaN endpoints).
    """

    kind: EffectKind
    point: float
    se_t: float
    ci_low: float
    ci_high: float
    level: float = 0.95
    method: str = "wald"

    def __post_init__(self):
        if not 0 < self.level < 1:
            raise DomainError(f"level must be in (0, 1), got {self.level!r}")
        if self.method == "point_only":
            return
        if not (self.ci_low <= self.point <= self.ci_high):
            raise DomainError(
                f"interval ({self.ci_low}, {self.ci_high}) does not bracket "
                f"point {self.point}"
            )
        if self.kind.is_ratio:
            if self.ci_low <= 0:
                raise DomainError("ratio interval endpoints must be positive")
            if self.method == "wald":
                # log-symmetric: ci_high/point == point/ci_low
                if not math.isclose(
                    self.ci_high / self.point, self.point / self.ci_low, rel_tol=1e-9
                ):
                    raise DomainError("ratio Wald interval is not log-symmetric")
        else:
            if not -1 <= self.point <= 1:
                raise DomainError("risk difference must lie in [-1, 1]")
            if self.method == "wald":
                if not math.isclose(
                    self.point - self.ci_low,
                    self.ci_high - self.point,
                    rel_tol=1e-9,
                    abs_tol=1e-15,
                ):
                    raise DomainError("difference Wald interval is not symmetric")

    @property
    def point_t(self) -> float:
        """Point estimate on the transformed (SE) scale."""
        return transform(self.kind, self.point)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "point": self.point,
            "se_transformed": self.se_t,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "method": self.method,
        }


def wald_estimate(
    kind: EffectKind, point_t: float, se_t: float, level: float = 0.95
) -> EffectEstimate:
    """Build an EffectEstimate from a transformed-scale point and SE."""
    if se_t < 0 or not math.isfinite(se_t):
        raise DomainError(f"standard error must be finite and nonnegative: {se_t!r}")
    z = norm.ppf(0.5 + level / 2.0)
    lo = back_transform(kind, point_t - z * se_t)
    hi = back_transform(kind, point_t + z * se_t)
    return EffectEstimate(kind, back_transform(kind, point_t), se_t, lo, hi, level)


def point_only_estimate(kind: EffectKind, point: float, level: float = 0.95) -> EffectEstimate:
    return EffectEstimate(
        kind, point, float("nan"), float("nan"), float("nan"), level, method="point_only"
    )


def _require_positive_cells(table: TwoByTwoTable, names: Sequence[str]) -> None:
    zero = [n for n in names if getattr(table, n) == 0]
    if zero:
        raise ZeroCellError(
            f"cells {', '.join(zero)} are zero; apply correct_zero_cells first"
        )


def effect(
    table: TwoByTwoTable, kind: EffectKind, level: float = 0.95
) -> EffectEstimate:
    """Effect measure of one 2x2 table with a Wald compatibility interval.

    OR and RR intervals are log-symmetric; the RD interval is symmetric on
    the identity scale. Raises ZeroCellError when a cell needed by the point
    estimate or its SE is zero, and DegenerateMarginError when a margin is.
    """
    a, b, c, d = table.a, table.b, table.c, table.d
    n1, n0 = table.n_exposed, table.n_unexposed
    if n1 <= 0 or n0 <= 0 or (a + c) <= 0 or (b + d) <= 0:
        raise DegenerateMarginError("all four margins must be positive")

    if kind is EffectKind.OR:
        _require_positive_cells(table, ("a", "b", "c", "d"))
        point_t = math.log((a * d) / (b * c))
        se_t = math.sqrt(1 / a + 1 / b + 1 / c + 1 / d)
    elif kind is EffectKind.RR:
        _require_positive_cells(table, ("a", "c"))
        point_t = math.log((a / n1) / (c / n0))
        se_t = math.sqrt(1 / a - 1 / n1 + 1 / c - 1 / n0)
    else:
        p1, p0 = a / n1, c / n0
        point_t = p1 - p0
        se_t = math.sqrt(p1 * (1 - p1) / n1 + p0 * (1 - p0) / n0)
    return wald_estimate(kind, point_t, se_t, level)


def rr_from_or_at_baseline(odds_ratio: float, p0: float) -> float:
    """Exact single-stratum RR implied by an OR at baseline risk p0.

    RR = OR / (1 - p0 + p0 * OR). Exact for a single stratum; applying it to
    a covariate-adjusted OR typically yields a biased RR.
    """
    if odds_ratio <= 0 or not math.isfinite(odds_ratio):
        raise DomainError(f"odds ratio must be positive, got {odds_ratio!r}")
    if not 0 < p0 < 1:
        raise DomainError(f"baseline risk must be in (0, 1), got {p0!r}")
    return odds_ratio / (1 - p0 + p0 * odds_ratio)


def or_from_rr_at_baseline(risk_ratio: float, p0: float) -> float:
    """Exact inverse of :func:`rr_from_or_at_baseline`."""
    if risk_ratio <= 0 or not math.isfinite(risk_ratio):
        raise DomainError(f"risk ratio must be positive, got {risk_ratio!r}")
    if not 0 < p0 < 1:
        raise DomainError(f"baseline risk must be in (0, 1), got {p0!r}")
    p1 = risk_ratio * p0
    if p1 >= 1:
        raise DomainError(
            f"risk ratio {risk_ratio} is impossible at baseline risk {p0}: "
            "exposed risk would reach 1"
        )
    return (p1 / (1 - p1)) / (p0 / (1 - p0))


@dataclass(frozen=True)
class CollapsibilityReport:
    """Crude versus stratum-specific comparison for one measure.

    ``collapsible`` is true when the crude point and every stratum point
    agree within relative tolerance. ``attenuation`` is crude minus the
    common stratum value on the transformed scale; it is only defined when
    the strata are homogeneous among themselves.
    """

    kind: EffectKind
    crude: EffectEstimate
    strata: tuple[tuple[str, EffectEstimate], ...]
    collapsible: bool
    attenuation: float | None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "crude": self.crude.to_dict(),
            "strata": [
                {"label": label, **est.to_dict()} for label, est in self.strata
            ],
            "collapsible": self.collapsible,
            "attenuation": self.attenuation,
        }


def _points_agree(points: Sequence[float], rtol: float = COLLAPSE_RTOL) -> bool:
    scale = max(abs(p) for p in points)
    return (max(points) - min(points)) <= rtol * max(scale, 1e-300)


def collapsibility_report(
    strata: Sequence[tuple[str, TwoByTwoTable]],
    kind: EffectKind,
    level: float = 0.95,
) -> CollapsibilityReport:
    """Compare the crude (cellwise-pooled) measure against stratum measures."""
    if len(strata) < 2:
        raise DomainError("collapsibility needs at least two strata")
    pooled = strata[0][1]
    for _, table in strata[1:]:
        pooled = pooled.pooled_with(table)
    crude = effect(pooled, kind, level)
    per_stratum = tuple((label, effect(t, kind, level)) for label, t in strata)

    stratum_points = [est.point for _, est in per_stratum]
    homogeneous = _points_agree(stratum_points)
    collapsible = homogeneous and _points_agree(stratum_points + [crude.point])

    attenuation = None
    if homogeneous:
        common_t = sum(transform(kind, p) for p in stratum_points) / len(stratum_points)
        attenuation = crude.point_t - common_t
    return CollapsibilityReport(kind, crude, per_stratum, collapsible, attenuation)
