"""Corpus-scale portability screening and synthetic-corpus generation.

For every meta-analysis in a corpus the rank correlation of each effect
measure with baseline risk is computed; summaries stratify by study count
and report sign patterns, negligibility crossovers, and the least-squares
line of the RR correlation on the OR correlation. The generator produces
corpora under an explicit constant-measure mechanism with one RNG
substream per meta-analysis, so output is independent of iteration order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateError,
    DomainError,
    EmptyCorpusError,
    InfeasibleMechanismError,
)
from .meta import StudyRow
from .rankcorr import SpearmanResult, correlate_meta
from .tables import EffectKind, rr_from_or_at_baseline

DEFAULT_THRESHOLD = 0.3
DEFAULT_MIN_STUDIES = 5
DEFAULT_SPLIT_AT = 20


@dataclass(frozen=True)
class CorpusRecord:
    """Per-meta-analysis correlations; None marks a degenerate measure."""

    meta_id: str
    k: int
    rho_or: SpearmanResult | None
    rho_rr: SpearmanResult | None
    rho_rd: SpearmanResult | None

    def to_dict(self) -> dict:
        return {
            "meta_id": self.meta_id,
            "k": self.k,
            "rho_or": None if self.rho_or is None else self.rho_or.to_dict(),
            "rho_rr": None if self.rho_rr is None else self.rho_rr.to_dict(),
            "rho_rd": None if self.rho_rd is None else self.rho_rd.to_dict(),
        }


@dataclass(frozen=True)
class CorpusSummary:
    """One study-count stratum's sign and negligibility pattern.

    Fractions are over records where both the OR and RR correlations are
    defined; degenerate records are counted separately rather than silently
    dropped.
    """

    stratum: str
    n_meta: int
    n_degenerate: int
    frac_both_negative: float | None
    frac_or_negligible_rr_not: float | None
    frac_rr_negligible_or_not: float | None
    slope: float | None
    intercept: float | None
    threshold: float

    def to_dict(self) -> dict:
        return {
            "stratum": self.stratum,
            "n_meta": self.n_meta,
            "n_degenerate": self.n_degenerate,
            "frac_both_negative": self.frac_both_negative,
            "frac_or_negligible_rr_not": self.frac_or_negligible_rr_not,
            "frac_rr_negligible_or_not": self.frac_rr_negligible_or_not,
            "slope": self.slope,
            "intercept": self.intercept,
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class CorpusAnalysis:
    records: tuple[CorpusRecord, ...]
    summaries: tuple[CorpusSummary, ...]
    skipped: tuple[tuple[str, int], ...]  # (meta_id, study count) below the filter

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "summaries": [s.to_dict() for s in self.summaries],
            "skipped": [{"meta_id": m, "k": k} for m, k in self.skipped],
        }


def ols_line(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope and intercept of y on x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise DomainError("OLS needs at least two paired points")
    x_center = x - x.mean()
    denom = float(x_center @ x_center)
    if denom == 0.0:
        raise DegenerateError("OLS undefined: x is constant")
    slope = float(x_center @ (y - y.mean())) / denom
    return slope, float(y.mean() - slope * x.mean())


def _summarize(
    stratum: str, records: Sequence[CorpusRecord], threshold: float
) -> CorpusSummary:
    paired = [
        (r.rho_or.rho, r.rho_rr.rho)
        for r in records
        if r.rho_or is not None and r.rho_rr is not None
    ]
    n_degenerate = len(records) - len(paired)
    if not paired:
        return CorpusSummary(
            stratum, len(records), n_degenerate, None, None, None, None, None, threshold
        )
    n = len(paired)
    both_negative = sum(1 for o, r in paired if o < 0 and r < 0) / n
    or_neg_rr_not = sum(
        1 for o, r in paired if abs(o) < threshold <= abs(r)
    ) / n
    rr_neg_or_not = sum(
        1 for o, r in paired if abs(r) < threshold <= abs(o)
    ) / n
    slope = intercept = None
    if n >= 2:
        try:
            slope, intercept = ols_line([o for o, _ in paired], [r for _, r in paired])
        except DegenerateError:
            pass
    return CorpusSummary(
        stratum,
        len(records),
        n_degenerate,
        both_negative,
        or_neg_rr_not,
        rr_neg_or_not,
        slope,
        intercept,
        threshold,
    )


def analyze(
    studies: Sequence[StudyRow],
    min_studies: int = DEFAULT_MIN_STUDIES,
    threshold: float = DEFAULT_THRESHOLD,
    split_at: int = DEFAULT_SPLIT_AT,
    correction: float = 0.5,
    level: float = 0.95,
) -> CorpusAnalysis:
    """Screen a corpus of meta-analyses for effect-measure portability.

    Meta-analyses with fewer than ``min_studies`` studies are dropped and
    listed in the skip report. Rows are grouped by meta_id and processed in
    a canonical sort order, so the result is invariant to input row order.
    """
    if min_studies < 4:
        raise DomainError("min_studies must be at least 4 (rank correlation needs 4)")
    grouped: dict[str, list[StudyRow]] = {}
    for row in sorted(studies, key=lambda r: (r.meta_id, r.study_id)):
        grouped.setdefault(row.meta_id, []).append(row)

    records: list[CorpusRecord] = []
    skipped: list[tuple[str, int]] = []
    for meta_id, rows in grouped.items():
        if len(rows) < min_studies:
            skipped.append((meta_id, len(rows)))
            continue
        correlations = {}
        for kind in EffectKind:
            try:
                correlations[kind] = correlate_meta(rows, kind, correction, level)
            except DegenerateError:
                correlations[kind] = None
        records.append(
            CorpusRecord(
                meta_id=meta_id,
                k=len(rows),
                rho_or=correlations[EffectKind.OR],
                rho_rr=correlations[EffectKind.RR],
                rho_rd=correlations[EffectKind.RD],
            )
        )
    if not records:
        raise EmptyCorpusError(
            f"no meta-analysis has at least {min_studies} studies", skipped=skipped
        )

    low = [r for r in records if r.k < split_at]
    high = [r for r in records if r.k >= split_at]
    summaries = []
    if low:
        summaries.append(
            _summarize(f"{min_studies}<=k<{split_at}", low, threshold)
        )
    if high:
        summaries.append(_summarize(f"k>={split_at}", high, threshold))
    return CorpusAnalysis(tuple(records), tuple(summaries), tuple(skipped))


@dataclass(frozen=True)
class SimMechanism:
    """Constant-measure generator: which measure is held fixed, and where.

    ``kind`` names the measure forced constant at ``effect``; baseline risks
    are uniform on ``baseline_range``; study counts and per-arm sizes are
    uniform integers on their ranges. Feasibility (both arms' risks inside
    (0, 1) over the whole baseline range) is checked at construction.
    """

    kind: EffectKind
    effect: float
    baseline_range: tuple[float, float]
    studies_range: tuple[int, int] = (5, 25)
    arm_size_range: tuple[int, int] = (100, 400)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.baseline_range
        if not (0 < lo <= hi < 1):
            raise InfeasibleMechanismError(
                f"baseline range must satisfy 0 < lo <= hi < 1, got {self.baseline_range}"
            )
        k_lo, k_hi = self.studies_range
        if not (1 <= k_lo <= k_hi):
            raise InfeasibleMechanismError(f"bad studies range {self.studies_range}")
        n_lo, n_hi = self.arm_size_range
        if not (1 <= n_lo <= n_hi):
            raise InfeasibleMechanismError(f"bad arm-size range {self.arm_size_range}")
        if self.kind is EffectKind.RD:
            if not (-1 < self.effect < 1):
                raise InfeasibleMechanismError("risk difference must be in (-1, 1)")
            if not (0 < lo + self.effect and hi + self.effect < 1):
                raise InfeasibleMechanismError(
                    f"RD {self.effect} pushes risks outside (0, 1) on {self.baseline_range}"
                )
        else:
            if self.effect <= 0:
                raise InfeasibleMechanismError("ratio effects must be positive")
            if self.kind is EffectKind.RR and self.effect * hi >= 1:
                raise InfeasibleMechanismError(
                    f"RR {self.effect} is impossible at baseline risk {hi}"
                )

    def treated_risk(self, p0: float) -> float:
        if self.kind is EffectKind.OR:
            return rr_from_or_at_baseline(self.effect, p0) * p0
        if self.kind is EffectKind.RR:
            return self.effect * p0
        return p0 + self.effect

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "effect": self.effect,
            "baseline_range": list(self.baseline_range),
            "studies_range": list(self.studies_range),
            "arm_size_range": list(self.arm_size_range),
            "seed": self.seed,
        }


def simulate(mechanism: SimMechanism, n_meta: int) -> list[StudyRow]:
    """Generate a corpus of meta-analyses under the mechanism.

    Each meta-analysis uses its own RNG substream keyed by (seed, index),
    so regenerating any subset reproduces the same rows.
    """
    if n_meta < 1:
        raise DomainError(f"n_meta must be positive, got {n_meta}")
    lo, hi = mechanism.baseline_range
    k_lo, k_hi = mechanism.studies_range
    n_lo, n_hi = mechanism.arm_size_range
    width = max(4, len(str(n_meta)))
    rows: list[StudyRow] = []
    for index in range(n_meta):
        rng = np.random.default_rng([mechanism.seed, index])
        k = int(rng.integers(k_lo, k_hi + 1))
        for study in range(k):
            p0 = float(rng.uniform(lo, hi))
            p1 = mechanism.treated_risk(p0)
            n1 = int(rng.integers(n_lo, n_hi + 1))
            n0 = int(rng.integers(n_lo, n_hi + 1))
            x1 = int(rng.binomial(n1, p1))
            x0 = int(rng.binomial(n0, p0))
            rows.append(
                StudyRow(
                    meta_id=f"sim-{index:0{width}d}",
                    study_id=f"s{study:03d}",
                    t_events=x1,
                    t_total=n1,
                    c_events=x0,
                    c_total=n0,
                )
            )
    return rows
