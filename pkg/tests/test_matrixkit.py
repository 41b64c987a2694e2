import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from dlsem.exceptions import DimensionError, NotPSDError, SingularWeightError
from dlsem.matrixkit import (
    dim_from_length, duplication_matrix, guarded_inverse, inv_sym_sqrt, n_unique,
    pair_index, rank_with_tol, sym_sqrt, unvech, vech,
)

from .conftest import random_spd


def test_vech_identity():
    assert_array_equal(vech(np.eye(2)), [1, 0, 1])


def test_vech_small():
    assert_array_equal(vech([[4, 2], [2, 3]]), [4, 2, 3])


def test_unvech_examples():
    assert_array_equal(unvech([1, 0, 1]), np.eye(2))
    assert_array_equal(unvech([4, 2, 3]), [[4, 2], [2, 3]])


def test_unvech_rejects_non_triangular():
    with pytest.raises(DimensionError):
        unvech(np.arange(4.0))


def test_pair_order_is_column_major_lower():
    r, c = pair_index(3)
    assert list(zip(r, c)) == [(0, 0), (1, 0), (2, 0), (1, 1), (2, 1), (2, 2)]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**31 - 1))
def test_vech_roundtrip(p, seed):
    A = np.random.default_rng(seed).normal(size=(p, p))
    M = A + A.T
    assert_array_equal(unvech(vech(M)), M)
    assert dim_from_length(n_unique(p)) == p


def test_duplication_matrix(rng):
    M = random_spd(rng, 4)
    D = duplication_matrix(4)
    assert_allclose(D @ vech(M), M.ravel(order="F"), atol=0)


def test_sym_sqrt_examples(rng):
    assert_allclose(sym_sqrt(np.eye(3)), np.eye(3))
    assert_allclose(sym_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    M = random_spd(rng, 6)
    R = sym_sqrt(M)
    assert np.linalg.norm(R @ R - M) / np.linalg.norm(M) < 1e-10
    assert_allclose(R, R.T, atol=0)
    assert np.linalg.norm(R @ M - M @ R) < 1e-9


def test_sym_sqrt_psd_boundary():
    v = np.array([1.0, 2.0, 2.0])
    R = sym_sqrt(np.outer(v, v))
    assert_allclose(R @ R, np.outer(v, v), atol=1e-12)


def test_sym_sqrt_rejects_indefinite():
    with pytest.raises(NotPSDError):
        sym_sqrt(np.diag([1.0, -1.0]))


def test_inv_sym_sqrt(rng):
    M = random_spd(rng, 5)
    R = inv_sym_sqrt(M)
    assert_allclose(R @ M @ R, np.eye(5), atol=1e-10)


def test_guarded_inverse_examples():
    inv, rcond = guarded_inverse(np.eye(3))
    assert_allclose(inv, np.eye(3))
    assert rcond == pytest.approx(1.0)
    inv, _ = guarded_inverse(np.diag([2.0, 4.0]))
    assert_allclose(inv, np.diag([0.5, 0.25]))


def test_guarded_inverse_random(rng):
    M = random_spd(rng, 8)
    inv, rcond = guarded_inverse(M)
    assert_allclose(inv @ M, np.eye(8), atol=1e-10)
    assert_array_equal(inv, inv.T)
    assert 0 < rcond <= 1


def test_guarded_inverse_indefinite_symmetric():
    M = np.array([[1.0, 2.0], [2.0, 1.0]])
    inv, _ = guarded_inverse(M)
    assert_allclose(inv @ M, np.eye(2), atol=1e-12)


def test_guarded_inverse_rank_deficient():
    v = np.array([1.0, 2.0, 3.0])
    with pytest.raises(SingularWeightError) as info:
        guarded_inverse(np.outer(v, v))
    assert info.value.rcond < 1e-14


def test_rank_with_tol(rng):
    assert rank_with_tol(np.eye(4)) == 4
    v = rng.normal(size=5)
    assert rank_with_tol(np.outer(v, v)) == 1
    M = random_spd(rng, 5)
    assert rank_with_tol(M) == rank_with_tol(1e6 * M) == rank_with_tol(1e-6 * M)
