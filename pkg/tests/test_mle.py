import numpy as np
import pytest

from qiv.design import Dataset, ModelSpec, ParamVector, build_design
from qiv.gop import GopPoint, implied_risks
from qiv.mle import (MleConfig, fit_mle, loglik, loglik_grad, lr_test_null, marginal_att_plugin,
                     observed_information, risk, unit_scores, wald_interval)
from qiv.sim import ScenarioSpec, simulate_dataset


def random_phi(rng, q=2, m=1):
    # alpha near 1 and small gamma keep every unit in the admissible region
    beta = np.r_[rng.normal(0, 0.2), rng.normal(0, 0.1, q)]
    theta = np.r_[rng.normal(0.3, 0.2), rng.normal(0, 0.1, q)]
    return ParamVector(beta, theta, rng.normal(-1, 0.5),
                       rng.normal(0, 0.5, m), rng.normal(0, 0.3, q))


def random_data(rng, n=200, q=2, m=1):
    x = rng.normal(size=(n, q))
    z = rng.integers(0, 2, (n, m))
    a = rng.integers(0, 2, n)
    a[0] = 1
    y = rng.integers(0, 2, n)
    return Dataset(y, a, z, x)


def test_risk_matches_implied_triple():
    phi = ParamVector([0.2, 0.1], [0.3, -0.2], -0.5, [1.0], [0.4])
    x, z = np.array([0.7]), np.array([1.0])
    g = np.tanh(0.2 + 0.1 * 0.7)
    al = np.exp(0.3 - 0.2 * 0.7)
    G = np.exp(-0.5 + 1.0 + 0.4 * 0.7)
    r = implied_risks(GopPoint(g, al, G))
    assert risk(phi, 1, z, x) == pytest.approx(r.p11, abs=1e-13)
    assert risk(phi, 0, z, x) == pytest.approx(r.p00, abs=1e-13)


def test_loglik_by_hand():
    rng = np.random.default_rng(0)
    d = random_data(rng, 30)
    phi = random_phi(rng)
    p = np.array([risk(phi, d.a[i], d.z[i], d.x[i]) for i in range(d.n)])
    ref = np.sum(d.y * np.log(p) + (1 - d.y) * np.log(1 - p))
    assert loglik(phi, d) == pytest.approx(ref, rel=1e-12)


def test_loglik_infeasible_is_minus_inf():
    d = random_data(np.random.default_rng(1), 20)
    # gamma ~ -1 and alpha ~ 0 empties the root interval
    phi = ParamVector([-20.0, 0, 0], [-5.0, 0, 0], 0.0, [0.0], [0.0, 0.0])
    assert loglik(phi, d) == -np.inf


@pytest.mark.parametrize("seed", range(5))
def test_score_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    d = random_data(rng)
    phi = random_phi(rng)
    v = phi.to_array()
    g = loglik_grad(phi, d)
    fd = np.empty_like(v)
    for j in range(v.size):
        h = 1e-6 * max(1, abs(v[j]))
        up, dn = v.copy(), v.copy()
        up[j] += h
        dn[j] -= h
        fd[j] = (loglik(up, d) - loglik(dn, d)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * np.maximum(np.abs(fd), 1).max())


def test_duplication_doubles_loglik_and_score():
    rng = np.random.default_rng(3)
    d = random_data(rng, 50)
    phi = random_phi(rng)
    dd = Dataset(np.r_[d.y, d.y], np.r_[d.a, d.a], np.r_[d.z, d.z], np.r_[d.x, d.x])
    assert loglik(phi, dd) == pytest.approx(2 * loglik(phi, d), rel=1e-12)
    np.testing.assert_allclose(loglik_grad(phi, dd), 2 * loglik_grad(phi, d), rtol=1e-10)


def test_permutation_invariance():
    rng = np.random.default_rng(4)
    d = random_data(rng, 60)
    phi = random_phi(rng)
    perm = rng.permutation(d.n)
    dp = d.subset(perm)
    assert loglik(phi, dp) == pytest.approx(loglik(phi, d), rel=1e-12)
    np.testing.assert_allclose(unit_scores(phi, dp), unit_scores(phi, d)[perm], rtol=1e-12)


@pytest.fixture(scope="module")
def sim_fit():
    d = simulate_dataset(ScenarioSpec(n=8000, seed=21), rep=0)
    spec = ModelSpec(gamma=("x1", "x2"), alpha=("x1", "x2"), gop=("x1", "x2"))
    return d, spec, fit_mle(d, MleConfig(spec=spec))


def test_fit_converges_to_stationary_point(sim_fit):
    d, spec, fit = sim_fit
    assert fit.converged
    assert np.max(np.abs(fit.score)) / d.n < 1e-6
    assert np.all(np.linalg.eigvalsh(-fit.hessian) > 0)
    assert fit.kappa_hat == pytest.approx(np.linalg.eigvalsh(-fit.hessian).min() / fit.k)


def test_fit_beats_perturbations(sim_fit):
    d, spec, fit = sim_fit
    X = fit.design
    rng = np.random.default_rng(0)
    for _ in range(10):
        v = fit.phi_hat.to_array() + rng.normal(0, 0.05, fit.k)
        assert loglik(v, d, X) <= fit.loglik + 1e-8


def test_weak_identification_flag(sim_fit):
    _, _, fit = sim_fit
    assert ("weak_identification" in fit.diagnostics) == (fit.kappa_hat <= 10)


def test_plugin_att_and_interval(sim_fit):
    d, _, fit = sim_fit
    est = marginal_att_plugin(fit, d)
    treated = d.a == 1
    assert est.gamma_hat == pytest.approx(np.tanh(fit.design.gamma[treated] @ fit.phi_hat.beta).mean())
    lo, hi = wald_interval(est.gamma_hat, est.se)
    assert (est.ci_low, est.ci_high) == pytest.approx((lo, hi))
    assert abs(est.gamma_hat - 0.334) < 4 * est.se + 0.02


def test_observed_information_symmetric(sim_fit):
    d, _, fit = sim_fit
    info = observed_information(fit.phi_hat.to_array(), fit.design, d.y, d.a)
    np.testing.assert_allclose(info, info.T)


def test_null_fit_fixes_beta(sim_fit):
    d, spec, _ = sim_fit
    fit0 = fit_mle(d, MleConfig(spec=spec, null=True))
    assert np.all(fit0.phi_hat.beta == 0)
    assert fit0.k == build_design(d, spec).k - 3


def test_lr_test_detects_effect(sim_fit):
    d, spec, _ = sim_fit
    rep = lr_test_null(d, MleConfig(spec=spec))
    assert rep.df == 3
    assert rep.p_value < 1e-3
