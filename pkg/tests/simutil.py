"""Shared simulation helpers for the test suite."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from effectport.bglmm import BglmmParams
from effectport.meta import StudyRow


def simulate_bglmm_studies(
    params: BglmmParams, k: int, n0: int, n1: int, seed: int
) -> list[StudyRow]:
    """Draw studies from the bivariate logit-normal binomial model."""
    rng = np.random.default_rng(seed)
    cov = [
        [params.sigma0**2, params.rho * params.sigma0 * params.sigma1],
        [params.rho * params.sigma0 * params.sigma1, params.sigma1**2],
    ]
    effects = rng.multivariate_normal([0.0, 0.0], cov, size=k)
    rows = []
    for i in range(k):
        p0 = expit(params.mu0 + effects[i, 0])
        p1 = expit(params.mu1 + effects[i, 1])
        rows.append(
            StudyRow(
                meta_id="sim",
                study_id=f"s{i:03d}",
                t_events=int(rng.binomial(n1, p1)),
                t_total=n1,
                c_events=int(rng.binomial(n0, p0)),
                c_total=n0,
            )
        )
    return rows


def random_table_cells(rng: np.random.Generator) -> tuple[float, float, float, float]:
    """Strictly positive integer cells for property tests."""
    return tuple(int(c) for c in rng.integers(1, 200, size=4))
