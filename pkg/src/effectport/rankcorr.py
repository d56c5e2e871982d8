"""Spearman rank correlation between per-study effects and baseline risks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .errors import DegenerateError, DomainError, InsufficientStudiesError, LengthMismatchError
from .meta import StudyRow
from .tables import EffectKind, correct_zero_cells, effect


def midranks(values: Sequence[float]) -> np.ndarray:
    """Ranks 1..n with ties assigned the average of their positions."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    start = 0
    while start < len(values):
        stop = start
        while stop + 1 < len(values) and values[order[stop + 1]] == values[order[start]]:
            stop += 1
        ranks[order[start : stop + 1]] = 0.5 * (start + stop) + 1.0
        start = stop + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of midranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise LengthMismatchError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise DomainError("correlation needs at least two pairs")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DomainError("inputs must be finite")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateError("correlation undefined for a constant vector")
    rho = float(np.corrcoef(midranks(x), midranks(y))[0, 1])
    return max(-1.0, min(1.0, rho))


@dataclass(frozen=True)
class SpearmanResult:
    """Spearman rho with a Fisher-z compatibility interval."""

    kind: EffectKind
    rho: float
    n: int
    ci_low: float
    ci_high: float
    level: float = 0.95

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "rho": self.rho,
            "n": self.n,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
        }


def _fisher_interval(rho: float, n: int, level: float) -> tuple[float, float]:
    # Fisher z with the (1 + rho^2/2) variance inflation for rank correlations
    clipped = max(-1.0 + 1e-15, min(1.0 - 1e-15, rho))
    z = math.atanh(clipped)
    se = math.sqrt((1.0 + clipped**2 / 2.0) / (n - 3))
    half = norm.ppf(0.5 + level / 2.0) * se
    return math.tanh(z - half), math.tanh(z + half)


def correlate_meta(
    studies: Sequence[StudyRow],
    kind: EffectKind,
    correction: float = 0.5,
    level: float = 0.95,
) -> SpearmanResult:
    """Rank correlation of per-study effects with baseline risks.

    Baseline risk is the control-arm observed risk; for studies with a zero
    cell both the risk and the effect use the corrected table.
    """
    if len(studies) < 4:
        raise InsufficientStudiesError(
            f"rank correlation needs at least 4 studies, got {len(studies)}"
        )
    baseline, effects = [], []
    for study in studies:
        table = correct_zero_cells(study.to_table(), correction)
        baseline.append(table.baseline_risk)
        effects.append(effect(table, kind).point)
    rho = spearman(baseline, effects)
    lo, hi = _fisher_interval(rho, len(studies), level)
    return SpearmanResult(
        kind=kind, rho=rho, n=len(studies), ci_low=lo, ci_high=hi, level=level
    )
