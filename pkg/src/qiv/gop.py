"""Generalized odds product (GOP) parameterization of a binary risk triple.

The triple ``(p11, p01, p00)`` holds ``P(Y=1 | A=1, Z, X)``, the counterfactual
``P(Y_0=1 | A=1, Z, X)`` and ``P(Y=1 | A=0, Z, X)``.  It is mapped to

    gamma = p11 - p01           (conditional ATT, in (-1, 1))
    alpha = p01 / p00           (multiplicative confounding, > 0)
    gop   = odds(p11) * odds(p01) * odds(p00)

and back again by solving a cubic in ``p00``.  All functions broadcast over
numpy arrays so a whole sample can be handled in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RiskTriple",
    "GopPoint",
    "CubicCoeffs",
    "NumericalFailure",
    "gop_forward",
    "cubic_coeffs",
    "root_interval",
    "cubic_residual",
    "solve_p00",
    "solve_p00_bisect",
    "solve_p00_arrays",
    "implied_risks",
    "p00_partials",
]

ENDPOINT_TOL = 1e-12
ACOS_TOL = 1e-12
DELTA_BAND = 1e-14
BISECT_TOL = 1e-13
BISECT_MAXITER = 200


class NumericalFailure(ArithmeticError):
    """Root solver could not locate the unique admissible root."""


def _as_float(v):
    arr = np.asarray(v, dtype=float)
    return arr if arr.ndim else float(arr)


@dataclass(frozen=True)
class RiskTriple:
    p11: np.ndarray | float
    p01: np.ndarray | float
    p00: np.ndarray | float

    def __post_init__(self):
        for name in ("p11", "p01", "p00"):
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all((v > 0.0) & (v < 1.0)):
                raise ValueError(f"{name} must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class GopPoint:
    gamma: np.ndarray | float
    alpha: np.ndarray | float
    gop: np.ndarray | float

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        a = np.asarray(self.alpha, dtype=float)
        o = np.asarray(self.gop, dtype=float)
        if not np.all(np.abs(g) < 1.0):
            raise ValueError("gamma must lie in (-1, 1)")
        if not (np.all(a > 0.0) and np.all(np.isfinite(a))):
            raise ValueError("alpha must be positive and finite")
        if not (np.all(o > 0.0) and np.all(np.isfinite(o))):
            raise ValueError("gop must be positive and finite")
        # the admissible p00 interval is empty when alpha <= -gamma
        if not np.all(g + a > 0.0):
            raise ValueError("empty root interval: need gamma + alpha > 0")


@dataclass(frozen=True)
class CubicCoeffs:
    b1: np.ndarray | float
    b2: np.ndarray | float
    b3: np.ndarray | float
    b4: np.ndarray | float
    xi: np.ndarray | float
    zeta: np.ndarray | float
    delta: np.ndarray | float

    @property
    def shift(self):
        """Offset ``b2 / (3 b1)`` with ``p00 = t - shift``."""
        return self.b2 / (3.0 * self.b1)


def gop_forward(r: RiskTriple) -> GopPoint:
    """Map a risk triple to ``(gamma, alpha, gop)``."""
    p11 = np.asarray(r.p11, dtype=float)
    p01 = np.asarray(r.p01, dtype=float)
    p00 = np.asarray(r.p00, dtype=float)
    alpha = p01 / p00
    gamma = p11 - alpha * p00
    gop = (p11 / (1 - p11)) * (p01 / (1 - p01)) * (p00 / (1 - p00))
    return GopPoint(_as_float(gamma), _as_float(alpha), _as_float(gop))


def _coeffs(gamma, alpha, gop):
    b1 = (1.0 + gop) * alpha**2
    b2 = alpha * gamma - gop * (alpha**2 + 2.0 * alpha - alpha * gamma)
    b3 = -gop * (alpha * gamma + gamma - 2.0 * alpha - 1.0)
    b4 = gop * (gamma - 1.0)
    return b1, b2, b3, b4


def cubic_coeffs(g: GopPoint) -> CubicCoeffs:
    """Coefficients of the cubic in ``p00`` plus its depressed form."""
    gamma, alpha, gop = (np.asarray(v, dtype=float) for v in (g.gamma, g.alpha, g.gop))
    b1, b2, b3, b4 = _coeffs(gamma, alpha, gop)
    xi = (3 * b1 * b3 - b2**2) / (3 * b1**2)
    zeta = (2 * b2**3 - 9 * b1 * b2 * b3 + 27 * b1**2 * b4) / (27 * b1**3)
    delta = (zeta / 2) ** 2 + (xi / 3) ** 3
    return CubicCoeffs(*(_as_float(v) for v in (b1, b2, b3, b4, xi, zeta, delta)))


def root_interval(gamma, alpha):
    """Open interval that contains exactly one admissible ``p00``."""
    gamma = np.asarray(gamma, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    lo = np.maximum(0.0, -gamma / alpha)
    hi = np.minimum(np.minimum((1 - gamma) / alpha, 1 / alpha), 1.0)
    return lo, hi


def _poly(b1, b2, b3, b4, p):
    return ((b1 * p + b2) * p + b3) * p + b4


def _dpoly(b1, b2, b3, p):
    return (3 * b1 * p + 2 * b2) * p + b3


def cubic_residual(g: GopPoint, p00):
    """Value of the cubic at ``p00`` (zero at the admissible root)."""
    b1, b2, b3, b4 = _coeffs(*(np.asarray(v, dtype=float) for v in (g.gamma, g.alpha, g.gop)))
    return _as_float(_poly(b1, b2, b3, b4, np.asarray(p00, dtype=float)))


def _bisect(b1, b2, b3, b4, lo, hi):
    # F(lo) < 0 < F(hi) holds for every admissible point
    lo = lo.copy()
    hi = hi.copy()
    for _ in range(BISECT_MAXITER):
        mid = 0.5 * (lo + hi)
        neg = _poly(b1, b2, b3, b4, mid) < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        if np.all(hi - lo < BISECT_TOL):
            break
    return 0.5 * (lo + hi)


def solve_p00_bisect(g: GopPoint):
    """Admissible root by plain bisection over the whole interval."""
    arrs = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (g.gamma, g.alpha, g.gop)))
    gamma, alpha, gop = (np.atleast_1d(v) for v in arrs)
    lo, hi = root_interval(gamma, alpha)
    root = _bisect(*_coeffs(gamma, alpha, gop), lo, hi)
    return _as_float(root.reshape(arrs[0].shape))


def _in_interval(p, lo, hi):
    return (p > lo - ENDPOINT_TOL) & (p < hi + ENDPOINT_TOL)


def _nudge(p, lo, hi):
    p = np.where(p <= lo + ENDPOINT_TOL, lo + ENDPOINT_TOL, p)
    return np.where(p >= hi - ENDPOINT_TOL, hi - ENDPOINT_TOL, p)


def _cardano(xi, zeta, delta):
    sq = np.sqrt(np.maximum(delta, 0.0))
    return np.cbrt(-zeta / 2 + sq) + np.cbrt(-zeta / 2 - sq)


def _trig_roots(xi, zeta):
    xi = np.minimum(xi, -np.finfo(float).tiny)
    arg = (3 * zeta / (2 * xi)) * np.sqrt(-3 / xi)
    if np.any(np.abs(arg) > 1 + ACOS_TOL):
        raise NumericalFailure("arccos argument outside [-1, 1] on the trigonometric branch")
    theta = np.arccos(np.clip(arg, -1.0, 1.0))
    amp = 2 * np.sqrt(-xi / 3)
    return [amp * np.cos((theta + 2 * k * np.pi) / 3) for k in range(3)]


def _closed_form(gamma, alpha, gop):
    b1, b2, b3, b4 = _coeffs(gamma, alpha, gop)
    lo, hi = root_interval(gamma, alpha)
    # extreme GOP values overflow here; those entries go to bisection
    with np.errstate(over="ignore", invalid="ignore"):
        xi = (3 * b1 * b3 - b2**2) / (3 * b1**2)
        zeta = (2 * b2**3 - 9 * b1 * b2 * b3 + 27 * b1**2 * b4) / (27 * b1**3)
        delta = (zeta / 2) ** 2 + (xi / 3) ** 3
    shift = b2 / (3 * b1)

    cands = []
    use_cardano = delta > -DELTA_BAND
    use_trig = delta < 0
    if np.any(use_cardano):
        cands.append(np.where(use_cardano, _cardano(xi, zeta, delta) - shift, np.nan))
    if np.any(use_trig):
        idx = np.flatnonzero(use_trig)
        for t in _trig_roots(xi[idx], zeta[idx]):
            c = np.full_like(gamma, np.nan)
            c[idx] = t - shift[idx]
            cands.append(c)

    # among candidates inside the interval keep the smallest residual
    best = np.full_like(gamma, np.nan)
    best_res = np.full_like(gamma, np.inf)
    for c in cands:
        ok = np.isfinite(c) & _in_interval(c, lo, hi)
        cn = _nudge(np.where(ok, c, 0.5 * (lo + hi)), lo, hi)
        res = np.abs(_poly(b1, b2, b3, b4, cn))
        take = ok & (res < best_res)
        best = np.where(take, cn, best)
        best_res = np.where(take, res, best_res)
    return best, (b1, b2, b3, b4), (lo, hi)


def _polish(p, b, lo, hi, steps=3):
    # Newton refinement; keeps an update only if it stays inside and lowers |F|
    b1, b2, b3, b4 = b
    res = np.abs(_poly(b1, b2, b3, b4, p))
    for _ in range(steps):
        d = _dpoly(b1, b2, b3, p)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = p - _poly(b1, b2, b3, b4, p) / d
        q_res = np.abs(_poly(b1, b2, b3, b4, q))
        take = np.isfinite(q) & (q > lo) & (q < hi) & (q_res < res)
        p = np.where(take, q, p)
        res = np.where(take, q_res, res)
    return p


def solve_p00(g: GopPoint, method: str = "closed"):
    """Unique admissible baseline risk ``p00`` for each GOP point.

    ``method="closed"`` uses Cardano's formula when the discriminant is
    non-negative and the trigonometric form otherwise, falling back to
    bisection for any entry where no candidate lands in the interval.
    ``method="bisect"`` uses bisection only.
    """
    if method == "bisect":
        return solve_p00_bisect(g)
    if method != "closed":
        raise ValueError(f"unknown method {method!r}")
    arrs = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (g.gamma, g.alpha, g.gop)))
    p = solve_p00_arrays(*(np.atleast_1d(v) for v in arrs))
    return _as_float(p.reshape(arrs[0].shape))


def solve_p00_arrays(gamma, alpha, gop):
    """Closed-form solve on 1-d float arrays, without input validation."""
    gamma, alpha, gop = (np.asarray(v, dtype=float) for v in (gamma, alpha, gop))
    p, b, (lo, hi) = _closed_form(gamma, alpha, gop)
    miss = ~np.isfinite(p)
    if np.any(miss):
        p[miss] = _bisect(*(c[miss] for c in b), lo[miss], hi[miss])
    p = _polish(p, b, lo, hi)
    if not np.all((p > lo) & (p < hi)):
        raise NumericalFailure("root fell outside the admissible interval")
    return p


def implied_risks(g: GopPoint) -> RiskTriple:
    """Risk triple implied by a GOP point."""
    p00 = np.asarray(solve_p00(g))
    alpha = np.asarray(g.alpha, dtype=float)
    p01 = alpha * p00
    p11 = np.asarray(g.gamma, dtype=float) + p01
    return RiskTriple(_as_float(p11), _as_float(p01), _as_float(p00))


def p00_partials(gamma, alpha, gop, p00):
    """Implicit derivatives of ``p00`` w.r.t. gamma, alpha and log(gop).

    Obtained from ``dp/dc = -(dF/dc) / (dF/dp)`` on the cubic ``F``.  The
    denominator is returned too so callers can detect near-double roots.
    """
    g, a, o, p = gamma, alpha, gop, p00
    p2 = p * p
    p3 = p2 * p
    b1, b2, b3, _ = _coeffs(g, a, o)
    f_p = _dpoly(b1, b2, b3, p)
    f_g = (1 + o) * a * p2 - o * (a + 1) * p + o
    f_a = 2 * (1 + o) * a * p3 + (g - o * (2 * a + 2 - g)) * p2 + o * (2 - g) * p
    f_o = a * a * p3 - (a * a + 2 * a - a * g) * p2 - (a * g + g - 2 * a - 1) * p + (g - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -f_g / f_p, -f_a / f_p, -o * f_o / f_p, f_p
