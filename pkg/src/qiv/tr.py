"""Triply robust estimation of the marginal ATT with a single binary QIV.

Nuisances are ``P(Z=1|X)`` and ``P(A=1|Z,X)`` (logistic), the baseline risk
``p00(Z, X)`` from the GOP likelihood, and ``alpha(X)``/``gamma(X)`` which are
refit from doubly robust estimating equations.  The estimator averages the
efficient influence function; it stays consistent if the outcome-side models,
``alpha`` plus the treatment/QIV law, or ``gamma``/``p00`` plus the
treatment/QIV law are correctly specified.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import expit

from .design import Dataset, Design, ModelSpec
from .glm import CLAMP, LogisticFit, fit_logistic
from .gop import solve_p00_arrays
from .identify import WeakQivError
from .mle import AttEstimate, MleConfig, MleFit, TestReport, fit_mle, wald_interval

__all__ = [
    "TrConfig",
    "NuisanceValues",
    "NuisanceFits",
    "RefitResult",
    "EifEvaluation",
    "PositivityError",
    "UnidentifiedError",
    "fit_nuisances",
    "dr_refit_alpha",
    "dr_refit_gamma",
    "eif_value",
    "eif_evaluate",
    "tr_estimate",
    "dr_score_test",
]

log = logging.getLogger(__name__)

POSITIVITY_FLOOR = 1e-3
DENOM_FLOOR = 1e-6


class PositivityError(ValueError):
    """Some weight denominator is too close to zero."""


class UnidentifiedError(ValueError):
    """Estimating equations carry no information about the parameter."""


@dataclass(frozen=True)
class TrConfig:
    spec: ModelSpec = field(default_factory=ModelSpec)
    refit_alpha: bool = True
    refit_gamma: bool = True
    refit_passes: int = 1
    null: bool = False  # gamma(X) forced to zero (for the score test)
    level: float = 0.95
    max_newton: int = 50


@dataclass(frozen=True, eq=False)
class NuisanceValues:
    """Nuisance functions evaluated at every unit (both QIV levels where needed)."""

    pz1: np.ndarray
    pa1_z0: np.ndarray
    pa1_z1: np.ndarray
    e0_z0: np.ndarray
    e0_z1: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    p_treated: float

    def __post_init__(self):
        for name in ("pz1", "pa1_z0", "pa1_z1", "e0_z0", "e0_z1"):
            v = np.clip(np.asarray(getattr(self, name), dtype=float), CLAMP, 1 - CLAMP)
            object.__setattr__(self, name, v)
        if not 0 < self.p_treated < 1:
            raise ValueError("P(A=1) must lie in (0, 1)")

    def at(self, z):
        """``P(A=1|Z,X)`` and ``E(Y|A=0,Z,X)`` at the observed QIV."""
        z = np.asarray(z, dtype=float).ravel()
        return np.where(z == 1, self.pa1_z1, self.pa1_z0), np.where(z == 1, self.e0_z1, self.e0_z0)

    def outcome_mean(self, a, z):
        """``E(Y|A,Z,X) = gamma A + alpha^A p00``, consistent with gamma/alpha here."""
        _, e0 = self.at(z)
        return self.gamma * a + np.where(a == 1, self.alpha, 1.0) * e0


@dataclass(frozen=True)
class RefitResult:
    params: np.ndarray
    converged: bool
    iterations: int
    moment_norm: float
    fallback: bool = False


@dataclass(frozen=True, eq=False)
class NuisanceFits:
    pi_z: LogisticFit
    pi_a: LogisticFit
    mle: MleFit
    theta: np.ndarray
    beta: np.ndarray
    design_z: np.ndarray
    design_a: np.ndarray
    provenance: dict
    null: bool = False

    @property
    def outcome_design(self) -> Design:
        return self.mle.design

    def values(self, d: Dataset) -> NuisanceValues:
        """Evaluate every nuisance function at the units of ``d``."""
        X = self.outcome_design
        pz1 = self.pi_z.predict(self.design_z)
        xa0, xa1 = self.design_a.copy(), self.design_a.copy()
        xa0[:, 1] = 0.0
        xa1[:, 1] = 1.0
        e0 = []
        vec = self.mle.phi_hat.to_array()
        for zv in (0.0, 1.0):
            gp = X.with_z(zv).links(vec)
            e0.append(solve_p00_arrays(np.asarray(gp.gamma), np.asarray(gp.alpha), np.asarray(gp.gop)))
        gamma = np.zeros(d.n) if self.null else np.tanh(X.gamma @ self.beta)
        alpha = np.exp(X.alpha @ self.theta)
        return NuisanceValues(pz1, self.pi_a.predict(xa0), self.pi_a.predict(xa1), e0[0], e0[1],
                              alpha, gamma, float(d.a.mean()))


@dataclass(frozen=True)
class EifEvaluation:
    values: np.ndarray
    mean: float
    variance: float


def _qiv(d: Dataset) -> np.ndarray:
    if d.m != 1:
        raise ValueError("the triply robust estimator handles a single binary QIV; "
                         "use Dataset.with_qiv to analyse one QIV at a time")
    z = d.z[:, 0]
    if z.min() == z.max():
        raise WeakQivError(f"QIV column {d.z_names[0]!r} is constant; it cannot predict the outcome")
    return z


def _weights(d: Dataset, nv: NuisanceValues):
    z = _qiv(d)
    a = d.a
    pa1, e0 = nv.at(z)
    p_a = np.where(a == 1, pa1, 1 - pa1)
    p_z = np.where(z == 1, nv.pz1, 1 - nv.pz1)
    return z, a, pa1, e0, p_a, p_z


def _solve_moment(moment, jac, start, n, max_iter, tol):
    x = np.asarray(start, dtype=float).copy()
    m = moment(x)
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(m)) < tol * n:
            return x, True, it - 1, float(np.max(np.abs(m)))
        J = jac(x)
        try:
            step = np.linalg.solve(J, -m)
        except np.linalg.LinAlgError:
            return x, False, it, float(np.max(np.abs(m)))
        t = 1.0
        norm = np.linalg.norm(m)
        while t > 1e-8:
            cand = x + t * step
            with np.errstate(over="ignore", invalid="ignore"):
                mc = moment(cand)
            if np.all(np.isfinite(mc)) and np.linalg.norm(mc) < norm:
                break
            t *= 0.5
        else:
            return x, False, it, float(np.max(np.abs(m)))
        x, m = cand, mc
    return x, bool(np.max(np.abs(m)) < tol * n), it, float(np.max(np.abs(m)))


def _h(h_spec, default):
    if h_spec is None:
        return default
    h = np.asarray(h_spec, dtype=float)
    return h.reshape(-1, 1) if h.ndim == 1 else h


INFORMATIVE_TOL = 1e-8


def _check_informative(h, r):
    # fitted probabilities are clamped at 1e-10, so an exact zero never shows up
    if np.max(np.abs(r)) < INFORMATIVE_TOL or np.max(np.abs(h * r[:, None])) < 1e-12:
        raise UnidentifiedError("Z - P(Z=1|X) vanishes; estimating equations are uninformative")


def dr_refit_alpha(d: Dataset, nf: NuisanceFits, h_spec=None, nv: NuisanceValues | None = None,
                   max_iter: int = 50) -> RefitResult:
    """Solve the doubly robust estimating equations for the alpha-model.

    ``sum h(X) {Z - P(Z=1|X)} {(YA - Y(1-A) alpha(X)) / P(A|Z,X) - gamma(X)} = 0``
    """
    nv = nv or nf.values(d)
    Xa = nf.outcome_design.alpha
    h = _h(h_spec, Xa)
    if h.shape[1] != Xa.shape[1]:
        raise ValueError("h must have one column per alpha-model coefficient")
    z, a, _, _, p_a, _ = _weights(d, nv)
    r = z - nv.pz1
    _check_informative(h, r)
    y, g = d.y, nv.gamma
    hr = h * r[:, None]

    def moment(th):
        al = np.exp(Xa @ th)
        return hr.T @ ((y * a - y * (1 - a) * al) / p_a - g)

    def jac(th):
        al = np.exp(Xa @ th)
        return -(hr * (y * (1 - a) * al / p_a)[:, None]).T @ Xa

    x, ok, it, norm = _solve_moment(moment, jac, nf.theta, d.n, max_iter, 1e-8)
    if not ok:
        log.warning("alpha refit did not converge; keeping the likelihood estimate")
        return RefitResult(nf.theta.copy(), False, it, norm, fallback=True)
    return RefitResult(x, True, it, norm)


def dr_refit_gamma(d: Dataset, nf: NuisanceFits, h_spec=None, nv: NuisanceValues | None = None,
                   max_iter: int = 50) -> RefitResult:
    """Solve the doubly robust estimating equations for the gamma-model.

    ``sum h(X) {Z - P(Z=1|X)} {(YA - gamma(X) A) / (P(A|Z,X) p00(Z,X)) - alpha(X)} = 0``
    """
    nv = nv or nf.values(d)
    Xg = nf.outcome_design.gamma
    h = _h(h_spec, Xg)
    if h.shape[1] != Xg.shape[1]:
        raise ValueError("h must have one column per gamma-model coefficient")
    z, a, _, e0, p_a, _ = _weights(d, nv)
    r = z - nv.pz1
    _check_informative(h, r)
    y, al = d.y, nv.alpha
    hr = h * r[:, None]
    w = a / (p_a * e0)

    def moment(b):
        g = np.tanh(Xg @ b)
        return hr.T @ ((y - g) * w - al)

    def jac(b):
        g = np.tanh(Xg @ b)
        return -(hr * (w * (1 - g * g))[:, None]).T @ Xg

    x, ok, it, norm = _solve_moment(moment, jac, nf.beta, d.n, max_iter, 1e-8)
    if not ok:
        log.warning("gamma refit did not converge; keeping the likelihood estimate")
        return RefitResult(nf.beta.copy(), False, it, norm, fallback=True)
    return RefitResult(x, True, it, norm)


def _propensity_designs(d: Dataset, spec: ModelSpec):
    xz = d.covariates(spec.columns("pz", d))
    xa = d.covariates(spec.columns("pa", d))
    z = _qiv(d)
    return (np.column_stack([np.ones(d.n), xz]),
            np.column_stack([np.ones(d.n), z, xa]))


def fit_nuisances(d: Dataset, config: TrConfig | None = None, mle_fit: MleFit | None = None) -> NuisanceFits:
    """Fit the treatment/QIV law, the GOP likelihood, then refit alpha and gamma."""
    config = config or TrConfig()
    z = _qiv(d)
    Xz, Xa = _propensity_designs(d, config.spec)
    pi_z = fit_logistic(z, Xz)
    pi_a = fit_logistic(d.a, Xa)
    if mle_fit is None:
        mle_fit = fit_mle(d, MleConfig(spec=config.spec, null=config.null, level=config.level))
    beta = np.zeros_like(mle_fit.phi_hat.beta) if config.null else mle_fit.phi_hat.beta.copy()
    prov = {"pi_z": "logistic", "pi_a": "logistic", "e0": "gop-mle",
            "alpha": "gop-mle", "gamma": "zero" if config.null else "gop-mle",
            "mle_converged": mle_fit.converged, "refit_order": "sequential"}
    nf = NuisanceFits(pi_z, pi_a, mle_fit, mle_fit.phi_hat.theta.copy(), beta, Xz, Xa, prov, config.null)

    pz1 = pi_z.predict(Xz)
    cells = []
    for zv, pz in ((0.0, 1 - pz1), (1.0, pz1)):
        xa = Xa.copy()
        xa[:, 1] = zv
        pa1 = pi_a.predict(xa)
        cells += [pz * pa1, pz * (1 - pa1)]
    low = np.min(cells, axis=0) < POSITIVITY_FLOOR
    if low.any():
        raise PositivityError(f"{int(low.sum())} unit(s) have a fitted P(A,Z|X) cell below {POSITIVITY_FLOOR}")

    for _ in range(config.refit_passes):
        if config.refit_alpha:
            ra = dr_refit_alpha(d, nf, max_iter=config.max_newton)
            nf = replace(nf, theta=ra.params)
            prov["alpha"] = "dr-refit" if not ra.fallback else "gop-mle (refit failed)"
            prov["alpha_refit"] = {"converged": ra.converged, "iterations": ra.iterations}
        if config.refit_gamma and not config.null:
            rg = dr_refit_gamma(d, nf, max_iter=config.max_newton)
            nf = replace(nf, beta=rg.params)
            prov["gamma"] = "dr-refit" if not rg.fallback else "gop-mle (refit failed)"
            prov["gamma_refit"] = {"converged": rg.converged, "iterations": rg.iterations}
    return nf


def _bracket(d: Dataset, nv: NuisanceValues):
    """Per-unit bracketed term whose mean is ``P(A=1) * gamma``."""
    z, a, pa1, e0, p_a, p_z = _weights(d, nv)
    y, al, g = d.y, nv.alpha, nv.gamma
    p_az = p_a * p_z
    diff = nv.e0_z1 - nv.e0_z0
    for name, v in (("P(A|Z,X)", p_a), ("P(A,Z|X)", p_az)):
        bad = np.flatnonzero(v < DENOM_FLOOR)
        if bad.size:
            raise PositivityError(f"{name} below {DENOM_FLOOR} at unit(s) {bad[:10].tolist()}")
    bad = np.flatnonzero(np.abs(diff) < DENOM_FLOOR)
    if bad.size:
        raise UnidentifiedError("E(Y|A=0,Z=1,X) - E(Y|A=0,Z=0,X) below "
                                f"{DENOM_FLOOR} at unit(s) {bad[:10].tolist()}")
    e = nv.outcome_mean(a, z)
    cond = nv.pz1 * nv.pa1_z1 * nv.e0_z1 + (1 - nv.pz1) * nv.pa1_z0 * nv.e0_z0
    sign = np.where((a + z) % 2 == 0, 1.0, -1.0)
    alpha_w = np.where(a == 1, 1.0, al)
    return (pa1 * (y * a - y * (1 - a) * al) / p_a
            + g * (a - pa1)
            - (pa1 * (e * a - e * (1 - a) * al) / p_a - g * pa1)
            - cond * (y - e) / diff * sign / p_az * alpha_w)


def eif_value(d: Dataset, nv: NuisanceValues, gamma_bar: float, unit=None):
    """Estimated efficient influence function at ``gamma_bar``.

    ``(bracket_i - gamma_bar * A_i) / P(A=1)``; returns every unit unless
    ``unit`` (an index or index array) is given.
    """
    psi = (_bracket(d, nv) - gamma_bar * d.a) / nv.p_treated
    return psi if unit is None else psi[unit]


def eif_evaluate(d: Dataset, nv: NuisanceValues, gamma_bar: float) -> EifEvaluation:
    psi = eif_value(d, nv, gamma_bar)
    return EifEvaluation(psi, float(psi.mean()), float(psi.var(ddof=1)))


def tr_estimate(d: Dataset, nf: NuisanceFits | NuisanceValues, level: float = 0.95) -> AttEstimate:
    """Triply robust ATT: the root of the empirical EIF mean."""
    nv = nf if isinstance(nf, NuisanceValues) else nf.values(d)
    b = _bracket(d, nv)
    est = float(b.mean() / nv.p_treated)
    psi = (b - est * d.a) / nv.p_treated
    se = float(psi.std(ddof=1) / np.sqrt(d.n))
    lo, hi = wald_interval(est, se, level)
    diag = {"eif_mean": float(psi.mean())}
    if isinstance(nf, NuisanceFits):
        diag["provenance"] = dict(nf.provenance)
        if nf.provenance.get("alpha") == "dr-refit" or nf.provenance.get("gamma") == "dr-refit":
            diag["se_caveat"] = "nuisance refits treated as known in the standard error"
    return AttEstimate(est, se, float(lo), float(hi), "tr", level, diag)


def dr_score_test(d: Dataset, nf_null: NuisanceFits, h_spec=None) -> TestReport:
    """Doubly robust score-type test of no conditional ATT.

    Uses the alpha estimating function with ``gamma(X) = 0`` evaluated at the
    null-model estimates.  Contributions are corrected for estimating the
    QIV law, the treatment law and ``alpha`` before forming the covariance.
    """
    if not nf_null.null:
        raise ValueError("nf_null must be fitted with gamma forced to zero (TrConfig(null=True))")
    nv = nf_null.values(d)
    X = nf_null.outcome_design
    h = _h(h_spec, X.alpha)
    z, a, pa1, _, p_a, _ = _weights(d, nv)
    y, al = d.y, nv.alpha
    r = z - nv.pz1
    B = (y * a - y * (1 - a) * al) / p_a
    g = h * (r * B)[:, None]
    n = d.n

    # estimation effect of the alpha coefficients from the null likelihood fit
    fit = nf_null.mle
    free = fit.free
    info = -fit.hessian / n
    from .mle import unit_scores

    s = unit_scores(fit.phi_hat, d, X)[:, free]
    if_phi = s @ np.linalg.inv(info)
    kb = X.gamma.shape[1]
    st = X.slices()[1]
    theta_cols = np.arange(st.start, st.stop) - kb  # beta is not free under the null
    dB_dtheta = -(y * (1 - a) * al / p_a)[:, None] * X.alpha
    G_theta = (h * r[:, None]).T @ dB_dtheta / n
    u = g + if_phi[:, theta_cols] @ G_theta.T

    # QIV law
    pz = expit(nf_null.design_z @ nf_null.pi_z.coef)
    dr = -(pz * (1 - pz))[:, None] * nf_null.design_z
    G_z = (h * B[:, None]).T @ dr / n
    u = u + nf_null.pi_z.influence(z, nf_null.design_z) @ G_z.T

    # treatment law at the observed QIV
    pa_obs = expit(nf_null.design_a @ nf_null.pi_a.coef)
    dB = (a * (-y * (1 - pa_obs) / pa_obs) + (1 - a) * (-y * al * pa_obs / (1 - pa_obs)))
    G_a = (h * (r * dB)[:, None]).T @ nf_null.design_a / n
    u = u + nf_null.pi_a.influence(d.a, nf_null.design_a) @ G_a.T

    ubar = g.mean(0)
    S = np.cov(u, rowvar=False).reshape(h.shape[1], h.shape[1])
    eig = np.linalg.eigvalsh(S) if S.size else np.array([0.0])
    if eig.max() <= 0 or eig.min() <= 1e-12 * max(eig.max(), 1e-300):
        raise np.linalg.LinAlgError("moment covariance is singular")
    stat = float(n * ubar @ np.linalg.solve(S, ubar))
    df = h.shape[1]
    return TestReport(stat, int(df), float(stats.chi2.sf(stat, df)), "dr-score",
                      {"moment_mean": ubar.tolist()})
