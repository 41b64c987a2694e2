import numpy as np
import pytest
from numpy.testing import assert_allclose

from dlsem.estimation import fit, ml_loss
from dlsem.inference import information_weight, sandwich_cov, standard_cov, standard_errors
from dlsem.matrixkit import unvech, vech
from dlsem.moments import gamma_normal

from .conftest import random_spd


def test_information_variants_coincide_at_exact_fit(rng):
    S = random_spd(rng, 4)
    Ws = [information_weight(v, S, S) for v in ("S", "observed_M", "expected_M")]
    assert_allclose(Ws[0], Ws[2], rtol=1e-10)
    assert_allclose(Ws[1], Ws[2], rtol=1e-8, atol=1e-10)


def test_observed_information_is_half_hessian(rng):
    S, Sigma = random_spd(rng, 3), random_spd(rng, 3)
    s0 = vech(Sigma)
    h = 1e-4
    k = s0.size
    H = np.empty((k, k))
    f = lambda v: ml_loss(S, unvech(v))
    for i in range(k):
        for j in range(k):
            ei, ej = np.eye(k)[i] * h, np.eye(k)[j] * h
            H[i, j] = (f(s0 + ei + ej) - f(s0 + ei - ej) - f(s0 - ei + ej) + f(s0 - ei - ej)) / (4 * h * h)
    assert_allclose(information_weight("observed_M", S, Sigma), 0.5 * H, rtol=1e-5, atol=1e-6)


def test_unknown_variant():
    with pytest.raises(ValueError):
        information_weight("bogus", np.eye(2), np.eye(2))


def test_sandwich_collapses_when_gamma_matches_weight(rng):
    p_star, q = 10, 4
    J = rng.normal(size=(p_star, q))
    G = random_spd(rng, p_star)
    W = np.linalg.inv(G)
    assert_allclose(sandwich_cov(J, W, G, 50), standard_cov(J, W, 50), rtol=1e-10, atol=1e-14)


def test_sandwich_naive_oracle(rng):
    J = rng.normal(size=(6, 2))
    W, G = random_spd(rng, 6), random_spd(rng, 6)
    n = 30
    Hinv = np.linalg.inv(J.T @ W @ J)
    naive = Hinv @ (J.T @ W @ G @ W @ J) @ Hinv / n
    assert_allclose(sandwich_cov(J, W, G, n), naive, rtol=1e-10)


def test_standard_errors_positive_and_kinds(hs_moments, hs_spec):
    res = fit(hs_moments, hs_spec, "DLS_M", 1.0)
    se = standard_errors(res, hs_moments)
    assert se.kind == "standard"
    assert np.all(se.se > 0)
    res = fit(hs_moments, hs_spec, "DLS_M", 0.75)
    assert standard_errors(res, hs_moments).kind == "sandwich"
    assert standard_errors(res, hs_moments, se="standard").kind == "standard"
    assert_allclose(standard_errors(res, hs_moments).z, res.theta / standard_errors(res, hs_moments).se)


def test_ml_expected_information_standard_errors(hs_moments, hs_spec):
    res = fit(hs_moments, hs_spec, "ML")
    se = standard_errors(res, hs_moments, se="standard", information="expected_M")
    W = np.linalg.inv(gamma_normal(res.sigma))
    assert_allclose(se.se, np.sqrt(np.diag(np.linalg.inv(res.jac.T @ W @ res.jac)) / 145), rtol=1e-9)


def test_nonconverged_fit_rejected(hs_moments, hs_spec):
    from dlsem.estimation import FitOptions

    res = fit(hs_moments, hs_spec, "ML", options=FitOptions(max_iterations=1))
    with pytest.raises(ValueError):
        standard_errors(res, hs_moments)
