import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from vecmatch.data import Dataset
from vecmatch.errors import ContractError, ConvergenceError
from vecmatch.gps import (
    GpsMatrix,
    binary_scores,
    fit_arrays,
    fit_binary_ps,
    fit_multinomial_logit,
    logit,
    penalized_loglik,
    penalized_score,
    predict_gps,
)

from conftest import make_dataset


def _instance(seed):
    rng = np.random.default_rng(seed)
    z = int(rng.integers(2, 5))
    p = int(rng.integers(1, 3))
    n = int(rng.integers(40, 80))
    x = rng.standard_normal((n, p))
    beta = rng.normal(scale=0.7, size=(z - 1, p + 1))
    eta = np.hstack([np.hstack([np.ones((n, 1)), x]) @ beta.T, np.zeros((n, 1))])
    prob = np.exp(eta - eta.max(axis=1, keepdims=True))
    prob /= prob.sum(axis=1, keepdims=True)
    y = np.array([rng.choice(z, p=pr) for pr in prob])
    y[:z] = np.arange(z)  # every category present
    return x, y, z


@pytest.mark.parametrize("seed", range(20))
def test_newton_matches_derivative_free_maximizer(seed):
    x, y, z = _instance(seed)
    ridge = 0.1  # keeps the optimum finite on small samples
    model = fit_arrays(x, y, z, ridge=ridge)
    assert model.converged
    k = z - 1

    def neg(b):
        return -penalized_loglik(b, x, y, z, ridge)

    # restarted Powell from the origin; no gradient information is used
    res = minimize(neg, np.zeros(k * (x.shape[1] + 1)), method="Powell", options={"xtol": 1e-10, "ftol": 1e-15})
    for _ in range(3):
        res = minimize(neg, res.x, method="Powell", options={"xtol": 1e-10, "ftol": 1e-15})
    assert np.max(np.abs(res.x - model.coefficients.ravel())) < 1e-4
    assert -res.fun <= model.loglik + 1e-9
    d = np.hstack([np.ones((len(x), 1)), x])
    eta = np.hstack([d @ res.x.reshape(k, -1).T, np.zeros((len(x), 1))])
    oracle = np.exp(eta) / np.exp(eta).sum(axis=1, keepdims=True)
    assert np.max(np.abs(oracle - predict_gps(model, x).probs)) < 1e-4


def test_score_is_gradient_of_loglik():
    x, y, z = _instance(99)
    rng = np.random.default_rng(1)
    beta = rng.normal(size=(z - 1, x.shape[1] + 1))
    g = penalized_score(beta, x, y, z, 0.3)
    h = 1e-6
    num = np.zeros_like(beta)
    for idx in np.ndindex(beta.shape):
        e = np.zeros_like(beta)
        e[idx] = h
        num[idx] = (penalized_loglik(beta + e, x, y, z, 0.3) - penalized_loglik(beta - e, x, y, z, 0.3)) / (2 * h)
    assert np.allclose(g, num, atol=1e-5)


def test_matches_statsmodels_unpenalized():
    sm = pytest.importorskip("statsmodels.api")
    ds = make_dataset(5, sizes=(150, 150, 150))
    model = fit_multinomial_logit(ds, ridge=0.0)
    # statsmodels uses the first category as baseline; compare probabilities instead
    res = sm.MNLogit(ds.treatment, sm.add_constant(ds.covariates)).fit(disp=0, method="newton", tol=1e-12)
    ours = predict_gps(model, ds).probs
    assert np.max(np.abs(ours - res.predict())) < 1e-7


@given(st.integers(0, 10_000))
def test_gps_rows_sum_to_one(seed):
    ds = make_dataset(seed, sizes=(30, 40, 50), shift=1.5)
    gps = predict_gps(fit_multinomial_logit(ds), ds)
    assert np.all(np.abs(gps.probs.sum(axis=1) - 1) <= 1e-10)
    assert np.all((gps.probs > 0) & (gps.probs < 1))
    q = np.clip(gps.probs, 1e-12, 1 - 1e-12)
    assert np.allclose(gps.logits, np.log(q / (1 - q)))


def test_separation_needs_ridge():
    x = np.r_[np.linspace(-3, -1, 20), np.linspace(1, 3, 20)]
    ds = Dataset(covariates=x, treatment=np.r_[np.ones(20), np.full(20, 2)].astype(int))
    # the coefficients diverge, so a short iteration budget cannot meet the gradient criterion
    with pytest.raises(ConvergenceError, match="ridge > 0"):
        fit_multinomial_logit(ds, ridge=0.0, max_iter=3)
    with pytest.warns(RuntimeWarning):
        model = fit_multinomial_logit(ds, ridge=1e-8, max_iter=3)
    assert np.all(np.isfinite(model.coefficients))
    converged = fit_multinomial_logit(ds, ridge=1.0)
    assert converged.converged


def test_too_few_units():
    ds = Dataset(covariates=np.arange(6.0), treatment=[1, 1, 2, 2, 3, 3])
    with pytest.raises(ContractError):
        fit_multinomial_logit(ds)


def test_binary_ps_is_probability_of_first_arm():
    ds = make_dataset(2, shift=1.0)
    model = fit_binary_ps(ds, (1, 2))
    rows = np.flatnonzero(ds.treatment <= 2)
    e = binary_scores(model, ds.covariates[rows])
    # intercept score equation: mean fitted PS equals the share of arm 1
    assert abs(e.mean() - np.mean(ds.treatment[rows] == 1)) < 1e-6
    with pytest.raises(ContractError):
        fit_binary_ps(ds, (1, 1))


def test_logit_clamps_extremes():
    out = logit(np.array([0.0, 0.5, 1.0]))
    assert np.all(np.isfinite(out)) and out[1] == 0.0
    gps = GpsMatrix.from_probs([[0.2, 0.3, 0.5]])
    assert gps.column(3) == 2


def test_softmax_closed_form():
    from vecmatch.gps import GpsModel
    model = GpsModel(coefficients=np.array([[0.0, 0.0], [np.log(2), 0.0]]), arms=(1, 2, 3), ridge=0.0,
                     converged=True, iterations=0, loglik=0.0, grad_norm=0.0)
    # linear predictors (0, log 2) against the baseline 0 -> probs (1/4, 2/4, 1/4)
    probs = predict_gps(model, np.zeros((1, 1))).probs[0]
    assert np.allclose(probs, [0.25, 0.5, 0.25], atol=1e-15)
    zero = GpsModel(coefficients=np.zeros((2, 2)), arms=(1, 2, 3), ridge=0.0, converged=True,
                    iterations=0, loglik=0.0, grad_norm=0.0)
    assert np.allclose(predict_gps(zero, np.ones((4, 1))).probs, 1 / 3)
    with pytest.raises(ContractError):
        predict_gps(zero, np.ones((4, 2)))


def test_logit_of_example_vector():
    gps = GpsMatrix.from_probs([[0.30, 0.60, 0.10]])
    assert np.allclose(gps.logits[0], [np.log(3 / 7), np.log(3 / 2), np.log(1 / 9)], atol=1e-12)


def test_symmetric_design_gives_uniform_gps():
    rng = np.random.default_rng(4)
    base = rng.standard_normal((40, 2))
    x = np.vstack([base, base, base])
    ds = Dataset(covariates=x, treatment=np.repeat([1, 2, 3], 40))
    probs = predict_gps(fit_multinomial_logit(ds), ds).probs
    assert np.allclose(probs, 1 / 3, atol=1e-6)


def test_affine_invariance_of_fitted_probabilities():
    ds = make_dataset(8, sizes=(50, 60, 70))
    x2 = ds.covariates.copy()
    x2[:, 0] = -2.5 * x2[:, 0] + 4.0
    ds2 = Dataset(covariates=x2, treatment=ds.treatment)
    p1 = predict_gps(fit_multinomial_logit(ds, ridge=0.0), ds).probs
    p2 = predict_gps(fit_multinomial_logit(ds2, ridge=0.0), ds2).probs
    assert np.max(np.abs(p1 - p2)) < 1e-6


def test_reference_block_is_zero_and_gradient_small():
    ds = make_dataset(9)
    model = fit_multinomial_logit(ds)
    assert model.converged and model.grad_norm <= 1e-8
    assert np.all(model.full_coefficients()[-1] == 0)
