"""Simulation design with a binary QIV, misspecification scenarios, Monte Carlo.

Covariates are ``X1 ~ Bernoulli(0.5)`` and ``X2 ~ N(0, 1)``; ``X2*`` is an
independent ``Uniform(-1, 1)`` draw handed to a working model in place of
``X2`` to misspecify it.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit

from .design import Dataset, ModelSpec
from .gop import solve_p00_arrays

__all__ = [
    "Scenario",
    "DgpParams",
    "ScenarioSpec",
    "McSummary",
    "simulate_dataset",
    "apply_misspec",
    "true_att",
    "true_nuisances",
    "run_replicate",
    "run_mc",
    "TRUE_ATT",
]

log = logging.getLogger(__name__)

TRUE_ATT = 0.334
X_NAMES = ("x1", "x2", "x2star")


class Scenario(str, Enum):
    ALL_CORRECT = "all-correct"
    M1_CORRECT = "m1-correct"
    M2_CORRECT = "m2-correct"
    M3_CORRECT = "m3-correct"

    @classmethod
    def parse(cls, s) -> "Scenario":
        if isinstance(s, cls):
            return s
        key = str(s).lower().replace("_", "-")
        aliases = {"allcorrect": "all-correct", "m1correct": "m1-correct",
                   "m2correct": "m2-correct", "m3correct": "m3-correct"}
        return cls(aliases.get(key.replace("-", ""), key))


@dataclass(frozen=True)
class DgpParams:
    beta: tuple = (0.3, 0.1, 0.1)
    theta: tuple = (0.4, 0.2, 0.1)
    omega0: float = -5.0
    omega1: float = 3.5
    eta: tuple = (1.5, 0.5)
    z_coef: tuple = (-0.5, 0.2, -0.1)
    a_coef: tuple = (-0.2, 0.1, -0.1, 0.05)  # intercept, Z, X1, X2

    def null(self) -> "DgpParams":
        """Same design with no conditional ATT (confounding kept)."""
        return DgpParams(beta=(0.0, 0.0, 0.0), theta=self.theta, omega0=self.omega0,
                         omega1=self.omega1, eta=self.eta, z_coef=self.z_coef, a_coef=self.a_coef)


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: Scenario = Scenario.ALL_CORRECT
    n: int = 20_000
    seed: int = 0
    reps: int = 200
    dgp: DgpParams = field(default_factory=DgpParams)

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        if self.n < 100:
            raise ValueError("n must be at least 100")
        if self.reps < 1:
            raise ValueError("reps must be positive")


def _rng(seed, rep=None):
    key = [int(seed)] if rep is None else [int(seed), int(rep)]
    return np.random.default_rng(np.random.SeedSequence(key))


def _outcome_parts(x1, x2, z, p: DgpParams):
    gamma = np.tanh(p.beta[0] + p.beta[1] * x1 + p.beta[2] * x2)
    alpha = np.exp(p.theta[0] + p.theta[1] * x1 + p.theta[2] * x2)
    gop = np.exp(p.omega0 + p.omega1 * z + p.eta[0] * x1 + p.eta[1] * x2)
    return gamma, alpha, gop


def _draw(rng, n, p: DgpParams):
    x1 = rng.binomial(1, 0.5, n).astype(float)
    x2 = rng.standard_normal(n)
    x2s = rng.uniform(-1.0, 1.0, n)
    z = (rng.random(n) < expit(p.z_coef[0] + p.z_coef[1] * x1 + p.z_coef[2] * x2)).astype(float)
    pa = expit(p.a_coef[0] + p.a_coef[1] * z + p.a_coef[2] * x1 + p.a_coef[3] * x2)
    a = (rng.random(n) < pa).astype(float)
    return x1, x2, x2s, z, a


def simulate_dataset(spec: ScenarioSpec, rep: int | None = None) -> Dataset:
    """Draw one dataset; ``rep`` selects an independent per-replicate stream."""
    rng = _rng(spec.seed, rep)
    p = spec.dgp
    x1, x2, x2s, z, a = _draw(rng, spec.n, p)
    gamma, alpha, gop = _outcome_parts(x1, x2, z, p)
    p00 = solve_p00_arrays(gamma, alpha, gop)
    risk = gamma * a + np.where(a == 1, alpha, 1.0) * p00
    y = (rng.random(spec.n) < risk).astype(float)
    return Dataset(y, a, z, np.column_stack([x1, x2, x2s]), ("z",), X_NAMES)


def apply_misspec(d: Dataset | None, scenario) -> ModelSpec:
    """Covariate sets handed to each working model under ``scenario``."""
    scenario = Scenario.parse(scenario)
    right, wrong = ("x1", "x2"), ("x1", "x2star")
    cols = dict(gamma=right, alpha=right, gop=right, pz=right, pa=right)
    if scenario is Scenario.M1_CORRECT:
        cols.update(pz=wrong, pa=wrong)
    elif scenario is Scenario.M2_CORRECT:
        cols.update(gamma=wrong)
    elif scenario is Scenario.M3_CORRECT:
        cols.update(alpha=wrong)
    return ModelSpec(**cols)


def true_att(n: int = 10_000_000, seed: int = 20240601, dgp: DgpParams | None = None,
             chunk: int = 1_000_000) -> float:
    """Average of gamma(X) over treated units in one large draw."""
    p = dgp or DgpParams()
    rng = _rng(seed)
    num = 0.0
    cnt = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        x1, x2, _, _, a = _draw(rng, m, p)
        g = np.tanh(p.beta[0] + p.beta[1] * x1 + p.beta[2] * x2)
        num += g[a == 1].sum()
        cnt += int((a == 1).sum())
        done += m
    return num / cnt


def true_nuisances(d: Dataset, dgp: DgpParams | None = None):
    """Per-unit nuisance values under the true data-generating law."""
    from .tr import NuisanceValues

    p = dgp or DgpParams()
    x1, x2 = d.column("x1"), d.column("x2")
    pz1 = expit(p.z_coef[0] + p.z_coef[1] * x1 + p.z_coef[2] * x2)
    pa = [expit(p.a_coef[0] + p.a_coef[1] * zv + p.a_coef[2] * x1 + p.a_coef[3] * x2) for zv in (0.0, 1.0)]
    e0 = []
    for zv in (0.0, 1.0):
        g, al, G = _outcome_parts(x1, x2, zv, p)
        e0.append(solve_p00_arrays(g, al, G))
    gamma = np.tanh(p.beta[0] + p.beta[1] * x1 + p.beta[2] * x2)
    alpha = np.exp(p.theta[0] + p.theta[1] * x1 + p.theta[2] * x2)
    return NuisanceValues(pz1=pz1, pa1_z0=pa[0], pa1_z1=pa[1], e0_z0=e0[0], e0_z1=e0[1],
                          alpha=alpha, gamma=gamma, p_treated=float(d.a.mean()))


@dataclass
class McSummary:
    scenario: str
    n: int
    reps: int
    seed: int
    truth: float
    estimators: dict
    records: list

    def as_dict(self) -> dict:
        return {"scenario": self.scenario, "n": self.n, "reps": self.reps, "seed": self.seed,
                "truth": self.truth, "estimators": self.estimators}


def run_replicate(spec: ScenarioSpec, rep: int, estimators=("mle", "tr"), level: float = 0.95):
    """Fit the requested estimators on replicate ``rep``; failures become records."""
    from .mle import MleConfig, fit_mle, marginal_att_plugin
    from .tr import TrConfig, fit_nuisances, tr_estimate

    d = simulate_dataset(spec, rep)
    ms = apply_misspec(d, spec.scenario)
    out = []
    fit = None
    try:
        fit = fit_mle(d, MleConfig(spec=ms, level=level))
    except Exception as exc:  # noqa: BLE001 - failures are recorded, not raised
        err = f"{type(exc).__name__}: {exc}"
        return [dict(rep=rep, estimator=e, estimate=np.nan, se=np.nan, ci_low=np.nan,
                     ci_high=np.nan, ok=False, error=err) for e in estimators]
    for e in estimators:
        try:
            if e == "mle":
                est = marginal_att_plugin(fit, d, level)
                ok = fit.converged
            elif e == "tr":
                nf = fit_nuisances(d, TrConfig(spec=ms, level=level), mle_fit=fit)
                est = tr_estimate(d, nf, level)
                ok = fit.converged
            else:
                raise ValueError(f"unknown estimator {e!r}")
            out.append(dict(rep=rep, estimator=e, estimate=est.gamma_hat, se=est.se,
                            ci_low=est.ci_low, ci_high=est.ci_high, ok=bool(ok), error=""))
        except Exception as exc:  # noqa: BLE001
            out.append(dict(rep=rep, estimator=e, estimate=np.nan, se=np.nan, ci_low=np.nan,
                            ci_high=np.nan, ok=False, error=f"{type(exc).__name__}: {exc}"))
    return out


def _summarise(records, truth, estimators):
    summ = {}
    for e in estimators:
        rs = [r for r in records if r["estimator"] == e]
        good = [r for r in rs if r["ok"] and np.isfinite(r["estimate"])]
        est = np.array([r["estimate"] for r in good])
        se = np.array([r["se"] for r in good])
        cover = np.array([r["ci_low"] <= truth <= r["ci_high"] for r in good])
        k = len(good)
        summ[e] = {
            "mean": float(est.mean()) if k else float("nan"),
            "bias": float(est.mean() - truth) if k else float("nan"),
            "mc_sd": float(est.std(ddof=1)) if k > 1 else float("nan"),
            "mc_se": float(est.std(ddof=1) / np.sqrt(k)) if k > 1 else float("nan"),
            "mean_se": float(se.mean()) if k else float("nan"),
            "coverage": float(cover.mean()) if k else float("nan"),
            "n_ok": k,
            "failures": len(rs) - k,
        }
    return summ


def _workers(n_jobs):
    if n_jobs is None:
        n_jobs = int(os.environ.get("QIV_NUM_THREADS", "1"))
    return max(1, n_jobs)


def run_mc(spec: ScenarioSpec, estimators=("mle", "tr"), n_jobs: int | None = None,
           level: float = 0.95, truth: float = TRUE_ATT, progress=None) -> McSummary:
    """Run ``spec.reps`` replicates and summarise each estimator."""
    estimators = tuple(estimators)
    reps = range(spec.reps)
    workers = _workers(n_jobs)
    records = []
    if workers == 1:
        for r in reps:
            records.extend(run_replicate(spec, r, estimators, level))
            if progress:
                progress(r)
    else:
        with ProcessPoolExecutor(workers) as ex:
            futs = [ex.submit(run_replicate, spec, r, estimators, level) for r in reps]
            for f in futs:
                records.extend(f.result())
    records.sort(key=lambda r: (r["rep"], r["estimator"]))
    return McSummary(spec.scenario.value, spec.n, spec.reps, spec.seed, truth,
                     _summarise(records, truth, estimators), records)
