"""Nonparametric identification within a discrete covariate stratum."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .design import Dataset

__all__ = [
    "StratumMeans",
    "Identified",
    "WeakQivError",
    "ModelViolationWarning",
    "stratum_means",
    "np_identify",
    "additive_bias",
    "relevance_stat",
    "RelevanceStat",
]

ABS_FLOOR = 1e-3


class WeakQivError(ValueError):
    """The QIV does not predict the outcome among the untreated."""


class ModelViolationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class StratumMeans:
    """Cell means ``E(Y | A=a, Z=z)`` indexed ``e[a, z]`` with counts ``n[a, z]``.

    Counts may be omitted (population quantities); the relevance rule then
    uses only the absolute floor.
    """

    e: np.ndarray
    n: np.ndarray | None = None

    def __post_init__(self):
        e = np.asarray(self.e, dtype=float).reshape(2, 2)
        if np.any((e < 0) | (e > 1)):
            raise ValueError("cell means must lie in [0, 1]")
        object.__setattr__(self, "e", e)
        if self.n is not None:
            n = np.asarray(self.n, dtype=float).reshape(2, 2)
            if np.any(n < 1):
                raise ValueError("every (a, z) cell needs at least one unit")
            object.__setattr__(self, "n", n)

    @classmethod
    def from_cells(cls, cells: dict, counts: dict | None = None) -> "StratumMeans":
        e = [[cells[(a, z)] for z in (0, 1)] for a in (0, 1)]
        n = None if counts is None else [[counts[(a, z)] for z in (0, 1)] for a in (0, 1)]
        return cls(np.array(e), None if n is None else np.array(n))


@dataclass(frozen=True)
class Identified:
    alpha_x: float
    gamma_x: float
    gamma_z0: float
    gamma_z1: float
    relevance: float
    notes: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.alpha_x, self.gamma_x))


def _cell_se(e, n, a, z):
    return np.sqrt(e[a, z] * (1 - e[a, z]) / n[a, z])


def stratum_means(d: Dataset, rows=None, qiv: int = 0) -> StratumMeans:
    """Empirical cell means within the rows selected by ``rows``."""
    mask = np.ones(d.n, bool) if rows is None else np.asarray(rows, bool)
    z = d.z[:, qiv]
    e = np.empty((2, 2))
    n = np.empty((2, 2))
    for a in (0, 1):
        for zv in (0, 1):
            sel = mask & (d.a == a) & (z == zv)
            n[a, zv] = sel.sum()
            if n[a, zv] == 0:
                raise ValueError(f"empty cell (a={a}, z={zv})")
            e[a, zv] = d.y[sel].mean()
    return StratumMeans(e, n)


def np_identify(s: StratumMeans, floor: float = ABS_FLOOR, se_mult: float = 2.0) -> Identified:
    """Recover ``alpha(x)`` and ``gamma(x)`` from the four cell means."""
    e = s.e
    denom = e[0, 1] - e[0, 0]
    thresh = floor
    if s.n is not None:
        se = np.hypot(_cell_se(e, s.n, 0, 1), _cell_se(e, s.n, 0, 0))
        thresh = max(floor, se_mult * se)
    if abs(denom) <= thresh:
        raise WeakQivError(
            f"|E(Y|A=0,Z=1) - E(Y|A=0,Z=0)| = {abs(denom):.3g} does not exceed {thresh:.3g}")
    alpha = (e[1, 1] - e[1, 0]) / denom
    g0 = e[1, 0] - alpha * e[0, 0]
    g1 = e[1, 1] - alpha * e[0, 1]
    notes = []
    if alpha < 0:
        warnings.warn("negative alpha(x): the multiplicative model is violated", ModelViolationWarning)
        notes.append("negative alpha")
    if s.n is not None:
        w = s.n.sum(axis=0)
        gamma = float((w[0] * g0 + w[1] * g1) / w.sum())
        # g1 - g0 vanishes algebraically; the check guards against rounding only
        joint = np.sqrt(sum(_cell_se(e, s.n, a, z) ** 2 for a in (0, 1) for z in (0, 1)))
        if abs(g1 - g0) > 4 * joint + 1e-12:
            warnings.warn("z-specific gamma(x) values disagree", ModelViolationWarning)
            notes.append("gamma disagreement across z")
    else:
        gamma = float(0.5 * (g0 + g1))
    if abs(gamma) >= 1:
        warnings.warn("|gamma(x)| >= 1: outside the risk-difference range", ModelViolationWarning)
        notes.append("gamma outside (-1, 1)")
    return Identified(float(alpha), gamma, float(g0), float(g1), float(denom), notes)


def additive_bias(alpha_x, e00):
    """Additive confounding bias ``(alpha - 1) E(Y|A=0,Z,X)``."""
    return (np.asarray(alpha_x, dtype=float) - 1.0) * np.asarray(e00, dtype=float) + 0.0


@dataclass(frozen=True)
class RelevanceStat:
    difference: float
    se: float
    p_value: float
    n0: int
    n1: int

    def __iter__(self):
        return iter((self.difference, self.se, self.p_value))


def relevance_stat(d: Dataset, rows=None, qiv: int = 0) -> RelevanceStat:
    """Two-sample test that Z shifts the outcome mean among the untreated."""
    mask = np.ones(d.n, bool) if rows is None else np.asarray(rows, bool)
    untreated = mask & (d.a == 0)
    z = d.z[:, qiv]
    y1 = d.y[untreated & (z == 1)]
    y0 = d.y[untreated & (z == 0)]
    if y1.size == 0 or y0.size == 0:
        raise ValueError("empty untreated cell")
    m1, m0 = y1.mean(), y0.mean()
    se = float(np.sqrt(m1 * (1 - m1) / y1.size + m0 * (1 - m0) / y0.size))
    diff = float(m1 - m0)
    if se == 0:
        p = 1.0 if diff == 0 else 0.0
    else:
        p = float(2 * stats.norm.sf(abs(diff) / se))
    return RelevanceStat(diff, se, p, int(y0.size), int(y1.size))
