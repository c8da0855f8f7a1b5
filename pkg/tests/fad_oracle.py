"""Closed-form and independent-algorithm references for the Fréchet distance."""

from __future__ import annotations

import numpy as np
from scipy import linalg

from foleycascade.fad import GaussianStats, frechet_distance


def diagonal_closed_form(mu_a, var_a, mu_b, var_b) -> float:
    return float(np.sum((mu_a - mu_b) ** 2) + np.sum((np.sqrt(var_a) - np.sqrt(var_b)) ** 2))


def schur_reference(a: GaussianStats, b: GaussianStats) -> float:
    """Textbook formula with scipy's Schur-based sqrtm of the non-symmetric product."""
    cross = linalg.sqrtm(a.sigma @ b.sigma)
    return float(np.sum((a.mu - b.mu) ** 2) + np.trace(a.sigma + b.sigma - 2 * np.real(cross)))


def random_stats(rng: np.random.Generator, d: int, diagonal: bool = False) -> GaussianStats:
    mu = rng.normal(0, 2, d)
    if diagonal:
        return GaussianStats(mu, np.diag(rng.uniform(0.01, 4, d)), 100)
    m = rng.normal(size=(d, d + 2))
    return GaussianStats(mu, m @ m.T / (d + 2), 100)


def property_sweep(pairs: int = 100, seed: int = 0) -> dict[str, float]:
    """Worst-case errors over random Gaussian pairs of dimension 1..64."""
    rng = np.random.default_rng(seed)
    worst = {"one_d": 0.0, "diagonal": 0.0, "self": 0.0, "symmetry": 0.0, "schur": 0.0, "negative": 0.0}
    for _ in range(pairs):
        d = int(rng.integers(1, 65))
        m1, m2, s1, s2 = rng.normal(0, 3, 4)
        a1 = GaussianStats(np.array([m1]), np.array([[s1**2]]), 2)
        b1 = GaussianStats(np.array([m2]), np.array([[s2**2]]), 2)
        worst["one_d"] = max(worst["one_d"], abs(frechet_distance(a1, b1) - ((m1 - m2) ** 2 + (abs(s1) - abs(s2)) ** 2)))
        da, db = random_stats(rng, d, True), random_stats(rng, d, True)
        ref = diagonal_closed_form(da.mu, np.diag(da.sigma), db.mu, np.diag(db.sigma))
        worst["diagonal"] = max(worst["diagonal"], abs(frechet_distance(da, db) - ref))
        a, b = random_stats(rng, d), random_stats(rng, d)
        dab, dba = frechet_distance(a, b), frechet_distance(b, a)
        worst["self"] = max(worst["self"], frechet_distance(a, a))
        worst["symmetry"] = max(worst["symmetry"], abs(dab - dba))
        worst["schur"] = max(worst["schur"], abs(dab - schur_reference(a, b)) / max(1.0, dab))
        worst["negative"] = max(worst["negative"], -min(dab, dba, 0.0))
    return worst
