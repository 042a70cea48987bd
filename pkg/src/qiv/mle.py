"""Maximum likelihood under the GOP parameterization.

The outcome law is ``P(Y=1 | A, Z, X) = gamma(X) A + alpha(X)^A p00(Z, X)``
with ``p00`` the admissible root of the GOP cubic.  Because the links map
all of R^k onto admissible risks, the likelihood is maximised without
constraints.  Scores use implicit differentiation of the cubic; the observed
information is a central difference of the analytic score.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats
from scipy.special import logit

from .design import Dataset, Design, ModelSpec, ParamVector, build_design, eval_links
from .gop import NumericalFailure, p00_partials, solve_p00_arrays

__all__ = [
    "MleConfig",
    "MleFit",
    "AttEstimate",
    "TestReport",
    "risk",
    "loglik",
    "loglik_grad",
    "unit_scores",
    "observed_information",
    "fit_mle",
    "marginal_att_plugin",
    "lr_test_null",
    "wald_interval",
]

log = logging.getLogger(__name__)

EPS = 1e-10
FP_FLOOR = 1e-12
KAPPA_MIN = 10.0


@dataclass(frozen=True)
class MleConfig:
    spec: ModelSpec = field(default_factory=ModelSpec)
    null: bool = False  # fix beta = 0 (no conditional ATT)
    start: np.ndarray | None = None
    gtol: float = 1e-6  # on the score divided by n
    max_iter: int = 500
    level: float = 0.95


@dataclass(frozen=True, eq=False)
class MleFit:
    phi_hat: ParamVector
    covariance: np.ndarray | None
    loglik: float
    kappa_hat: float
    converged: bool
    iterations: int
    design: Design
    free: np.ndarray
    hessian: np.ndarray
    score: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return int(self.free.sum())


@dataclass(frozen=True)
class AttEstimate:
    gamma_hat: float
    se: float
    ci_low: float
    ci_high: float
    method: str
    level: float = 0.95
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"gamma_hat": self.gamma_hat, "se": self.se, "ci_low": self.ci_low,
                "ci_high": self.ci_high, "method": self.method, "level": self.level,
                "diagnostics": self.diagnostics}


@dataclass(frozen=True)
class TestReport:
    statistic: float
    df: int
    p_value: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"statistic": self.statistic, "df": self.df, "p_value": self.p_value,
                "method": self.method, "diagnostics": self.diagnostics}


def wald_interval(est, se, level=0.95):
    q = stats.norm.ppf(0.5 + level / 2)
    return est - q * se, est + q * se


def _vec(phi):
    return phi.to_array() if isinstance(phi, ParamVector) else np.asarray(phi, dtype=float)


def _links(vec, X: Design):
    sb, st, so = X.slices()
    with np.errstate(over="ignore"):
        return np.tanh(X.gamma @ vec[sb]), np.exp(X.alpha @ vec[st]), np.exp(X.gop @ vec[so])


def _feasible(g, al, G):
    return bool(np.all(np.isfinite(al)) and np.all(np.isfinite(G)) and np.all(G > 0)
                and np.all(g + al > 0))


def _p00_fd(g, al, G, p00, which):
    # one-sided difference of the root, used where dF/dp is ~0
    h = 1e-7
    args = [g.copy(), al.copy(), G.copy()]
    if which == 2:
        args[2] = G * np.exp(h)
    else:
        args[which] = args[which] + h
    return (solve_p00_arrays(*args) - p00) / h


def _evaluate(vec, X: Design, y, a, grad=False):
    """Per-unit log-likelihood terms (and score rows) at ``vec``.

    Returns ``(None, None)`` when some unit has an empty root interval.
    """
    g, al, G = _links(vec, X)
    if not _feasible(g, al, G):
        return None, None
    p00 = solve_p00_arrays(g, al, G)
    alpha_a = np.where(a == 1, al, 1.0)
    p = g * a + alpha_a * p00
    pc = np.clip(p, EPS, 1 - EPS)
    ll = y * np.log(pc) + (1 - y) * np.log1p(-pc)
    if not grad:
        return ll, None
    d_g, d_a, d_o, f_p = p00_partials(g, al, G, p00)
    bad = np.abs(f_p) < FP_FLOOR
    if np.any(bad):
        idx = np.flatnonzero(bad)
        sub = (g[idx], al[idx], G[idx], p00[idx])
        d_g[idx] = _p00_fd(*sub, 0)
        d_a[idx] = _p00_fd(*sub, 1)
        d_o[idx] = _p00_fd(*sub, 2)
    dl_dp = np.where(pc == p, y / pc - (1 - y) / (1 - pc), 0.0)
    s_b = dl_dp * (a + alpha_a * d_g) * (1 - g * g)
    s_t = dl_dp * (a * al * p00 + alpha_a * d_a * al)
    s_o = dl_dp * alpha_a * d_o
    scores = np.hstack([X.gamma * s_b[:, None], X.alpha * s_t[:, None], X.gop * s_o[:, None]])
    return ll, scores


def _prep(d: Dataset, design: Design | None, spec: ModelSpec | None = None):
    return design if design is not None else build_design(d, spec)


def risk(phi: ParamVector, a, z_row, x_row):
    """``P(Y=1 | A=a, Z=z, X=x; phi)`` under the shared-covariate model."""
    gp = eval_links(phi, x_row, z_row)
    g, al, G = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (gp.gamma, gp.alpha, gp.gop))
    p00 = solve_p00_arrays(*np.broadcast_arrays(g, al, G))
    out = g * a + al**a * p00
    return float(out[0]) if out.size == 1 else out


def loglik(phi, d: Dataset, design: Design | None = None) -> float:
    """Bernoulli log-likelihood summed over units.

    Risks are clamped to ``[1e-10, 1 - 1e-10]``.  Returns ``-inf`` when some
    unit falls outside the admissible region ``gamma + alpha > 0``.
    """
    X = _prep(d, design)
    ll, _ = _evaluate(_vec(phi), X, d.y, d.a)
    return -np.inf if ll is None else float(ll.sum())


def unit_scores(phi, d: Dataset, design: Design | None = None) -> np.ndarray:
    """``n x k`` matrix of per-unit score contributions."""
    X = _prep(d, design)
    ll, s = _evaluate(_vec(phi), X, d.y, d.a, grad=True)
    if s is None:
        raise NumericalFailure("parameters outside the admissible region")
    return s


def loglik_grad(phi, d: Dataset, design: Design | None = None) -> np.ndarray:
    return unit_scores(phi, d, design).sum(axis=0)


def observed_information(vec, X: Design, y, a, free=None):
    """Negative Hessian by central differences of the score, symmetrised."""
    vec = np.asarray(vec, dtype=float)
    free = np.ones(vec.size, bool) if free is None else free
    idx = np.flatnonzero(free)
    H = np.empty((idx.size, idx.size))
    for col, j in enumerate(idx):
        h = 1e-5 * max(1.0, abs(vec[j]))
        up, dn = vec.copy(), vec.copy()
        up[j] += h
        dn[j] -= h
        _, su = _evaluate(up, X, y, a, grad=True)
        _, sd = _evaluate(dn, X, y, a, grad=True)
        if su is None or sd is None:
            raise NumericalFailure("Hessian step left the admissible region")
        H[:, col] = (su.sum(0)[idx] - sd.sum(0)[idx]) / (2 * h)
    H = 0.5 * (H + H.T)
    return -H


class _Objective:
    def __init__(self, X, y, a, free, base):
        self.X, self.y, self.a = X, y, a
        self.free, self.base = free, base
        self.n = y.size
        self.nfev = 0

    def full(self, v):
        out = self.base.copy()
        out[self.free] = v
        return out

    def fun(self, v):
        self.nfev += 1
        ll, _ = _evaluate(self.full(v), self.X, self.y, self.a)
        return np.inf if ll is None else -ll.sum() / self.n

    def fun_grad(self, v):
        self.nfev += 1
        ll, s = _evaluate(self.full(v), self.X, self.y, self.a, grad=True)
        if ll is None:
            return np.inf, np.zeros(v.size)
        return -ll.sum() / self.n, -s.sum(0)[self.free] / self.n


def _newton_polish(obj, v, gtol, steps=20):
    f, gr = obj.fun_grad(v)
    for _ in range(steps):
        if np.max(np.abs(gr)) < gtol * 1e-2:
            break
        info = observed_information(obj.full(v), obj.X, obj.y, obj.a, obj.free) / obj.n
        try:
            step = np.linalg.solve(info, -gr)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-6:
            f2, g2 = obj.fun_grad(v + t * step)
            if f2 <= f + 1e-14 * abs(f):
                break
            t *= 0.5
        else:
            break
        v, f, gr = v + t * step, f2, g2
    return v, f, gr


def fit_mle(d: Dataset, config: MleConfig | None = None, design: Design | None = None) -> MleFit:
    """Unconstrained quasi-Newton maximisation of the GOP likelihood.

    Starts at ``config.start`` (zeros by default), restarts from zeros with
    ``omega0 = 3 logit(ybar)`` if that fails and finally tries Nelder-Mead.
    """
    config = config or MleConfig()
    X = _prep(d, design, config.spec)
    k = X.k
    free = np.ones(k, bool)
    if config.null:
        free[X.slices()[0]] = False
    ybar = np.clip(d.y.mean(), 0.01, 0.99)
    marginal = np.zeros(k)
    marginal[X.slices()[2].start] = 3 * logit(ybar)

    starts = []
    if config.start is not None:
        s0 = np.asarray(config.start, dtype=float).copy()
        s0[~free] = 0.0
        starts.append(("start", s0))
    else:
        starts.append(("zeros", np.zeros(k)))
    starts.append(("marginal", marginal))

    diagnostics = {"attempts": []}
    best = None
    for label, s in starts:
        obj = _Objective(X, d.y, d.a, free, np.where(free, 0.0, s))
        if not np.isfinite(obj.fun(s[free])):
            diagnostics["attempts"].append({"start": label, "status": "infeasible start"})
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimize.minimize(obj.fun_grad, s[free], jac=True, method="BFGS",
                                    options={"gtol": config.gtol * 1e-2, "maxiter": config.max_iter})
        v, f, gr = _newton_polish(obj, res.x, config.gtol)
        ok = np.isfinite(f) and np.max(np.abs(gr)) < config.gtol
        diagnostics["attempts"].append({"start": label, "status": "converged" if ok else res.message,
                                        "iterations": int(res.nit), "nfev": obj.nfev})
        cand = (ok, -f, v, obj, int(res.nit))
        if best is None or (cand[0], cand[1]) > (best[0], best[1]):
            best = cand
        if ok:
            break
    if best is None or not best[0]:
        obj = _Objective(X, d.y, d.a, free, np.zeros(k))
        x0 = best[2] if best is not None else marginal[free]
        res = optimize.minimize(obj.fun, x0, method="Nelder-Mead",
                                options={"maxiter": 200 * k, "xatol": 1e-10, "fatol": 1e-12})
        _, gr = obj.fun_grad(res.x)
        ok = bool(np.max(np.abs(gr)) < config.gtol)
        diagnostics["attempts"].append({"start": "nelder-mead", "status": "converged" if ok else str(res.message)})
        diagnostics["fallback"] = "nelder-mead"
        if best is None or -res.fun > best[1]:
            best = (ok, -res.fun, res.x, obj, int(res.nit))

    ok, f, v, obj, nit = best
    vec = obj.full(v)
    info = observed_information(vec, X, d.y, d.a, free)
    eig = np.linalg.eigvalsh(info)
    kappa = float(eig.min() / free.sum())
    cov = None
    if eig.min() > 0:
        cov = np.zeros((k, k))
        cov[np.ix_(free, free)] = np.linalg.inv(info)
        cov = 0.5 * (cov + cov.T)
    else:
        diagnostics["singular_hessian"] = True
    _, s = _evaluate(vec, X, d.y, d.a, grad=True)
    if kappa <= KAPPA_MIN:
        diagnostics["weak_identification"] = f"kappa_hat={kappa:.3g} <= {KAPPA_MIN:g}"
    if not ok:
        log.warning("GOP likelihood maximisation did not converge")
    return MleFit(ParamVector.from_array(vec, X.layout), cov, float(f * d.n), kappa, bool(ok), nit,
                  X, free, -info, s.sum(0), diagnostics)


def marginal_att_plugin(fit: MleFit, d: Dataset, level: float = 0.95) -> AttEstimate:
    """Average of ``tanh(beta' x)`` over treated units, with delta-method SE.

    The variance adds the sampling variability of the treated covariate
    distribution to the parameter uncertainty from ``fit.covariance``.
    """
    treated = d.a == 1
    if not treated.any():
        raise ValueError("no treated units")
    Xg = fit.design.gamma[treated]
    g = np.tanh(Xg @ fit.phi_hat.beta)
    est = float(g.mean())
    n1 = treated.sum()
    var = g.var() / n1
    if fit.covariance is not None:
        dg = ((1 - g * g)[:, None] * Xg).mean(0)
        sb = fit.design.slices()[0]
        var += float(dg @ fit.covariance[sb, sb] @ dg)
    se = float(np.sqrt(var))
    lo, hi = wald_interval(est, se, level)
    diag = {"converged": fit.converged, "kappa_hat": fit.kappa_hat}
    return AttEstimate(est, se, float(lo), float(hi), "mle", level, diag)


def lr_test_null(d: Dataset, config: MleConfig | None = None,
                 design: Design | None = None, null_fit: MleFit | None = None) -> TestReport:
    """Likelihood-ratio test of ``beta = 0`` (no conditional ATT).

    ``null_fit`` reuses an existing restricted fit (it must share the design).
    The full fit is warm-started from the restricted estimate.
    """
    config = config or MleConfig()
    if null_fit is not None:
        X = null_fit.design
        if null_fit.free[X.slices()[0]].any():
            raise ValueError("null_fit must be fitted with beta fixed at zero")
        null = null_fit
    else:
        X = _prep(d, design, config.spec)
        null = fit_mle(d, replace(config, null=True, start=None), X)
    full = fit_mle(d, replace(config, null=False, start=null.phi_hat.to_array()), X)
    if not (null.converged and full.converged):
        raise NumericalFailure("null or full model failed to converge")
    stat = 2 * (full.loglik - null.loglik)
    df = X.gamma.shape[1]
    diag = {"loglik_full": full.loglik, "loglik_null": null.loglik}
    if stat < 0:
        diag["negative_statistic"] = stat
        stat = 0.0
    return TestReport(float(stat), int(df), float(stats.chi2.sf(stat, df)), "lr", diag)
