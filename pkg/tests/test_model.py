import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dlsem.exceptions import InvalidDataError, SpecError
from dlsem.matrixkit import vech
from dlsem.model import (
    FIXED, ModelSpec, curvature, implied_covariance, implied_covariance_vech, jacobian, start_values,
)


def one_factor(p):
    return ModelSpec.simple_structure(p, 1)


def fd_jacobian(spec, theta):
    cols = []
    for i in range(theta.size):
        h = 1e-6 * (1 + abs(theta[i]))
        e = np.zeros_like(theta)
        e[i] = h
        cols.append((implied_covariance_vech(spec, theta + e) - implied_covariance_vech(spec, theta - e)) / (2 * h))
    return np.column_stack(cols)


def test_implied_covariance_direct_product():
    spec = ModelSpec.from_pattern(np.ones((2, 1), bool), psi_free=True)
    theta = np.array([1.0, 1.0, 0.0, 0.0])
    assert_allclose(implied_covariance(spec, theta), [[1, 1], [1, 1]])
    assert_allclose(implied_covariance_vech(spec, theta), [1, 1, 1])


def test_zero_loadings_give_diagonal():
    spec = one_factor(2)
    Sigma = implied_covariance(spec, np.array([0.0, 0.0, 0.3, 0.7]))
    assert_allclose(Sigma, np.diag([0.3, 0.7]))
    assert_allclose(implied_covariance_vech(spec, np.array([0.0, 0.0, 0.3, 0.7])), [0.3, 0, 0.7])


def test_parameter_count_for_simulation_models():
    for (p, m), q in {(5, 1): 10, (15, 3): 33, (30, 3): 63}.items():
        assert ModelSpec.simple_structure(p, m).q == q


def test_parameter_order(hs_spec):
    names = hs_spec.param_names()
    assert names[:4] == ["visual=~x1", "visual=~x2", "visual=~x3", "visual=~x9"]
    assert names[10:13] == ["visual~~textual", "visual~~speed", "textual~~speed"]
    assert names[13:] == [f"x{j}~~x{j}" for j in range(1, 10)]
    assert hs_spec.q == 22 and hs_spec.df == 23


def test_single_loading_derivative():
    spec = ModelSpec.from_pattern(np.ones((1, 1), bool), psi_free=False)
    assert_allclose(jacobian(spec, np.array([0.6])), [[1.2]])


def test_psi_columns_are_unit(hs_spec, rng):
    theta = rng.uniform(0.2, 0.9, hs_spec.q)
    J = jacobian(hs_spec, theta)
    for j in range(hs_spec.p):
        E = np.zeros((hs_spec.p, hs_spec.p))
        E[j, j] = 1.0
        assert_array_equal(J[:, hs_spec.psi_index[j]], vech(E))


@pytest.mark.parametrize("spec_factory", [
    lambda: ModelSpec.simple_structure(6, 2),
    lambda: ModelSpec.simple_structure(6, 2).with_equal_loadings(),
    lambda: ModelSpec.simple_structure(6, 3).with_zero_factor_correlations(),
])
def test_jacobian_matches_finite_differences(spec_factory, rng):
    spec = spec_factory()
    theta = rng.uniform(0.2, 0.9, spec.q)
    J, F = jacobian(spec, theta), fd_jacobian(spec, theta)
    assert np.max(np.abs(J - F)) / np.max(np.abs(F)) < 1e-6


def test_hs_jacobian_matches_finite_differences(hs_spec, rng):
    theta = rng.uniform(0.2, 0.9, hs_spec.q)
    J, F = jacobian(hs_spec, theta), fd_jacobian(hs_spec, theta)
    assert np.max(np.abs(J - F)) / np.max(np.abs(F)) < 1e-6


def test_curvature_matches_finite_differences(hs_spec, rng):
    theta = rng.uniform(0.2, 0.9, hs_spec.q)
    v = rng.normal(size=45)
    h = 1e-6
    F = np.column_stack([
        (jacobian(hs_spec, theta + h * e).T @ v - jacobian(hs_spec, theta - h * e).T @ v) / (2 * h)
        for e in np.eye(hs_spec.q)
    ])
    assert_allclose(curvature(hs_spec, theta, v), F, atol=1e-7)


def test_full_column_rank_at_population():
    spec = ModelSpec.simple_structure(15, 3)
    L = np.where(spec.loading_index != FIXED, 0.8, 0.0)
    Phi = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
    theta = spec.pack(L, Phi, 1 - np.diag(L @ Phi @ L.T))
    assert np.linalg.matrix_rank(jacobian(spec, theta)) == spec.q


def test_sign_flip_invariance(rng):
    spec = ModelSpec.simple_structure(6, 2)
    theta = rng.uniform(0.2, 0.9, spec.q)
    L, Phi, psi = spec.matrices(theta)
    d = np.array([-1.0, 1.0])
    flipped = spec.pack(L * d, Phi * np.outer(d, d), psi)
    assert_allclose(implied_covariance(spec, flipped), implied_covariance(spec, theta), atol=1e-14)


def test_start_values():
    spec = ModelSpec.simple_structure(4, 2)
    th = start_values(spec, np.eye(4))
    kinds = spec.param_kinds()
    assert_allclose(th[kinds == "loading"], 0.7)
    assert_allclose(th[kinds == "phi"], 0.3)
    assert_allclose(th[kinds == "psi"], 0.5)
    th = start_values(spec, np.diag([4.0, 4.0, 1.0, 1.0]))
    assert_allclose(th[:2], 1.4)
    assert_allclose(th[kinds == "psi"][:2], 2.0)


def test_start_values_reject_zero_variance():
    with pytest.raises(InvalidDataError):
        start_values(one_factor(3), np.diag([1.0, 0.0, 1.0]))


def test_spec_json_roundtrip(tmp_path, hs_spec):
    d = {"variables": ["a", "b", "c", "d"], "factors": {"f": ["a", "b"], "g": ["c", "d"]},
         "cross_loadings": [["d", "f"]], "fixed": {"g=~c": 1.0}}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(d))
    spec = ModelSpec.from_json(path)
    assert spec.q == 4 + 1 + 4
    assert "g=~c" not in spec.param_names()
    L, _, _ = spec.matrices(np.zeros(spec.q))
    assert L[2, 1] == 1.0


def test_spec_errors(tmp_path):
    with pytest.raises(SpecError):
        ModelSpec.from_dict({"variables": ["a"], "factors": {"f": ["zz"]}})
    with pytest.raises(SpecError):
        ModelSpec.simple_structure(5, 2)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(SpecError):
        ModelSpec.from_json(bad)


def test_equal_loadings_pack_averages():
    spec = ModelSpec.simple_structure(4, 1).with_equal_loadings()
    assert spec.q == 1 + 4
    theta = spec.pack(np.array([[0.7], [0.8], [0.9], [1.0]]), np.eye(1), np.full(4, 0.3))
    assert theta[0] == pytest.approx(0.85)
