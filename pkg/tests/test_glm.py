import numpy as np
import pytest
from scipy.special import expit

from qiv.glm import SeparationError, fit_logistic, predict_logistic


def irls_oracle(y, X, iters=200):
    """Textbook IRLS: weighted least squares on the working response."""
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        eta = X @ b
        p = expit(eta)
        w = p * (1 - p)
        zw = eta + (y - p) / w
        sw = np.sqrt(w)
        b_new = np.linalg.lstsq(X * sw[:, None], zw * sw, rcond=None)[0]
        if np.max(np.abs(b_new - b)) < 1e-14:
            return b_new
        b = b_new
    return b


def random_problem(rng):
    n = int(rng.integers(80, 600))
    k = int(rng.integers(1, 5))
    X = np.column_stack([np.ones(n), rng.normal(size=(n, k))])
    beta = rng.normal(scale=0.7, size=k + 1)
    y = (rng.random(n) < expit(X @ beta)).astype(float)
    return y, X


@pytest.mark.parametrize("seed", range(10))
def test_matches_irls_oracle(seed):
    y, X = random_problem(np.random.default_rng(seed))
    fit = fit_logistic(y, X)
    assert fit.converged
    np.testing.assert_allclose(fit.coef, irls_oracle(y, X), atol=1e-8)


def test_score_zero_at_solution():
    y, X = random_problem(np.random.default_rng(42))
    fit = fit_logistic(y, X)
    np.testing.assert_allclose(X.T @ (y - expit(X @ fit.coef)), 0, atol=1e-8)


def test_separation_detected():
    x = np.linspace(-1, 1, 50)
    X = np.column_stack([np.ones(50), x])
    with pytest.raises(SeparationError):
        fit_logistic((x > 0).astype(float), X)
    with pytest.raises(SeparationError):
        fit_logistic(np.ones(50), X)


def test_rank_deficient():
    X = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(np.linalg.LinAlgError):
        fit_logistic(np.r_[np.zeros(5), np.ones(5)], X)


def test_non_binary_response():
    with pytest.raises(ValueError):
        fit_logistic([0, 0.5, 1], np.ones((3, 1)))


def test_predict_clamped_and_shape_checked():
    y, X = random_problem(np.random.default_rng(0))
    fit = fit_logistic(y, X)
    assert 0 < predict_logistic(fit, X[0]) < 1
    huge = np.r_[1.0, np.full(X.shape[1] - 1, 1e6)]
    p = predict_logistic(fit, huge)
    assert 0 < p < 1
    with pytest.raises(ValueError):
        predict_logistic(fit, X[0, :-1])


def test_influence_rows_average_to_zero():
    y, X = random_problem(np.random.default_rng(3))
    fit = fit_logistic(y, X)
    inf = fit.influence(y, X)
    assert inf.shape == X.shape
    np.testing.assert_allclose(inf.mean(0), 0, atol=1e-8)
