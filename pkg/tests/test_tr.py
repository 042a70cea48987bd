from dataclasses import replace

import numpy as np
import pytest

from qiv.design import Dataset, ModelSpec
from qiv.identify import WeakQivError
from qiv.sim import DgpParams, ScenarioSpec, simulate_dataset, true_nuisances
from qiv.tr import (PositivityError, TrConfig, dr_refit_alpha, dr_refit_gamma, dr_score_test,
                    eif_evaluate, eif_value, fit_nuisances, tr_estimate)

SPEC = ModelSpec(gamma=("x1", "x2"), alpha=("x1", "x2"), gop=("x1", "x2"), pz=("x1", "x2"),
                 pa=("x1", "x2"))


@pytest.fixture(scope="module")
def big():
    d = simulate_dataset(ScenarioSpec(n=300_000, seed=3), rep=0)
    return d, true_nuisances(d)


@pytest.fixture(scope="module")
def fitted():
    d = simulate_dataset(ScenarioSpec(n=20_000, seed=8), rep=0)
    return d, fit_nuisances(d, TrConfig(spec=SPEC))


def test_true_nuisances_near_truth(big):
    d, nv = big
    est = tr_estimate(d, nv)
    assert abs(est.gamma_hat - 0.334) < 3 * est.se + 0.002


def test_robust_to_wrong_gamma_and_baseline(big):
    d, nv = big
    wrong = replace(nv, gamma=np.full(d.n, 0.1), e0_z0=nv.e0_z0 * 0.8, e0_z1=nv.e0_z1 * 0.9)
    est = tr_estimate(d, wrong)
    assert abs(est.gamma_hat - 0.334) < 3 * est.se + 0.002


def test_robust_to_wrong_alpha(big):
    d, nv = big
    est = tr_estimate(d, replace(nv, alpha=np.ones(d.n)))
    assert abs(est.gamma_hat - 0.334) < 3 * est.se + 0.002


def test_robust_to_wrong_propensities(big):
    d, nv = big
    wrong = replace(nv, pz1=np.full(d.n, 0.4), pa1_z0=np.full(d.n, 0.45), pa1_z1=np.full(d.n, 0.5))
    est = tr_estimate(d, wrong)
    assert abs(est.gamma_hat - 0.334) < 3 * est.se + 0.002


def test_eif_root_and_indexing(big):
    d, nv = big
    sub = d.subset(np.arange(5000))
    nvs = true_nuisances(sub)
    est = tr_estimate(sub, nvs)
    ev = eif_evaluate(sub, nvs, est.gamma_hat)
    assert abs(ev.mean) < 1e-12
    assert est.se == pytest.approx(np.sqrt(ev.variance / sub.n))
    psi = eif_value(sub, nvs, 0.3)
    assert eif_value(sub, nvs, 0.3, unit=7) == psi[7]
    # linear in gamma_bar with slope -A / P(A=1)
    np.testing.assert_allclose(eif_value(sub, nvs, 0.4) - psi, -0.1 * sub.a / nvs.p_treated, atol=1e-12)


def test_refits_solve_their_moments(fitted):
    d, nf = fitted
    nv = nf.values(d)
    z = d.z[:, 0]
    pa1 = np.where(z == 1, nv.pa1_z1, nv.pa1_z0)
    p_a = np.where(d.a == 1, pa1, 1 - pa1)
    e0 = np.where(z == 1, nv.e0_z1, nv.e0_z0)
    X = nf.outcome_design
    r = z - nv.pz1
    # refits are sequential: alpha is solved with the likelihood gamma, then gamma given alpha
    g_mle = np.tanh(X.gamma @ nf.mle.phi_hat.beta)
    m_alpha = X.alpha.T @ (r * ((d.y * d.a - d.y * (1 - d.a) * nv.alpha) / p_a - g_mle))
    assert np.max(np.abs(m_alpha)) / d.n < 1e-6
    m_gamma = X.gamma.T @ (r * ((d.y * d.a - nv.gamma * d.a) / (p_a * e0) - nv.alpha))
    assert np.max(np.abs(m_gamma)) / d.n < 1e-6
    assert nf.provenance["alpha"] == "dr-refit"
    assert nf.provenance["gamma"] == "dr-refit"


def test_refit_returns_root_directly(fitted):
    d, nf = fitted
    ra = dr_refit_alpha(d, nf)
    rg = dr_refit_gamma(d, nf)
    assert ra.converged and rg.converged
    with pytest.raises(ValueError):
        dr_refit_alpha(d, nf, h_spec=np.ones(d.n))


def test_fitted_estimate(fitted):
    d, nf = fitted
    est = tr_estimate(d, nf)
    assert abs(est.gamma_hat - 0.334) < 4 * est.se
    assert est.ci_low < est.gamma_hat < est.ci_high


def test_requires_single_qiv():
    d = simulate_dataset(ScenarioSpec(n=500, seed=1), rep=0)
    d2 = Dataset(d.y, d.a, np.column_stack([d.z, d.z]), d.x, ("z", "w"), d.x_names)
    with pytest.raises(ValueError, match="single"):
        fit_nuisances(d2, TrConfig(spec=SPEC))


def test_constant_qiv():
    d = simulate_dataset(ScenarioSpec(n=500, seed=1), rep=0)
    d2 = Dataset(d.y, d.a, np.ones(d.n), d.x, ("z",), d.x_names)
    with pytest.raises(WeakQivError):
        fit_nuisances(d2, TrConfig(spec=SPEC))


def test_positivity_guard(big):
    d, nv = big
    sub = d.subset(np.arange(2000))
    nvs = replace(true_nuisances(sub), pa1_z0=np.full(sub.n, 1e-9))
    with pytest.raises(PositivityError):
        tr_estimate(sub, nvs)


def test_score_test_requires_null_fit(fitted):
    d, nf = fitted
    with pytest.raises(ValueError):
        dr_score_test(d, nf)


def test_score_test_power_and_null():
    d = simulate_dataset(ScenarioSpec(n=20_000, seed=2), rep=0)
    nf0 = fit_nuisances(d, TrConfig(spec=SPEC, null=True, refit_alpha=False))
    assert dr_score_test(d, nf0).p_value < 1e-3
    d0 = simulate_dataset(ScenarioSpec(n=20_000, seed=2, dgp=DgpParams().null()), rep=0)
    nf0 = fit_nuisances(d0, TrConfig(spec=SPEC, null=True, refit_alpha=False))
    rep = dr_score_test(d0, nf0)
    assert rep.df == 3 and 0 <= rep.p_value <= 1


def _flip(d):
    return Dataset(d.y, d.a, 1 - d.z, d.x, d.z_names, d.x_names)


def test_qiv_recoding_with_matched_nuisances(big):
    d, nv = big
    sub = d.subset(np.arange(20_000))
    nvs = true_nuisances(sub)
    flipped = replace(nvs, pz1=1 - nvs.pz1, pa1_z0=nvs.pa1_z1, pa1_z1=nvs.pa1_z0,
                      e0_z0=nvs.e0_z1, e0_z1=nvs.e0_z0)
    a = tr_estimate(sub, nvs)
    b = tr_estimate(_flip(sub), flipped)
    assert b.gamma_hat == pytest.approx(a.gamma_hat, abs=1e-10)
    assert b.se == pytest.approx(a.se, abs=1e-10)


def test_qiv_recoding_with_refits(fitted):
    # refitting under 1 - z reaches the same optimum up to solver tolerance
    d, nf = fitted
    a = tr_estimate(d, nf).gamma_hat
    b = tr_estimate(_flip(d), fit_nuisances(_flip(d), TrConfig(spec=SPEC))).gamma_hat
    assert b == pytest.approx(a, abs=1e-5)


def test_zero_residuals_reduce_to_plugin(big):
    d, nv = big
    sub = d.subset(np.arange(3000))
    nvs = true_nuisances(sub)
    # replace outcomes by their conditional means: residual terms drop out
    y_hat = nvs.outcome_mean(sub.a, sub.z[:, 0])
    fake = Dataset.__new__(Dataset)
    object.__setattr__(fake, "y", y_hat)
    for f in ("a", "z", "x", "z_names", "x_names"):
        object.__setattr__(fake, f, getattr(sub, f))
    psi = eif_value(fake, nvs, 0.3)
    # the weighted and augmentation terms collapse to gamma(X) A
    plugin = sub.a * (nvs.gamma - 0.3) / nvs.p_treated
    np.testing.assert_allclose(psi, plugin, atol=1e-12)


def test_equal_baselines_raise_relevance_error(big):
    from qiv.tr import UnidentifiedError

    d, nv = big
    sub = d.subset(np.arange(1000))
    nvs = true_nuisances(sub)
    with pytest.raises(UnidentifiedError, match="E\\(Y\\|A=0,Z=1,X\\)"):
        eif_value(sub, replace(nvs, e0_z1=nvs.e0_z0), 0.3)


def test_x_measurable_qiv_unidentified(fitted):
    from qiv.tr import UnidentifiedError

    d, nf = fitted
    nv = nf.values(d)
    # pretend P(Z=1|X) equals Z exactly: Z - P(Z=1|X) vanishes
    degenerate = replace(nv, pz1=d.z[:, 0].copy())
    with pytest.raises(UnidentifiedError):
        dr_refit_alpha(d, nf, nv=degenerate)


def test_score_test_zero_h_singular():
    d0 = simulate_dataset(ScenarioSpec(n=3000, seed=4, dgp=DgpParams().null()), rep=0)
    nf0 = fit_nuisances(d0, TrConfig(spec=SPEC, null=True, refit_alpha=False))
    with pytest.raises(np.linalg.LinAlgError):
        dr_score_test(d0, nf0, h_spec=np.zeros((d0.n, 1)))
