import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multiperc.smallmat import (
    DimensionError,
    NotSPDError,
    SingularMatrixError,
    SmallMat,
    cholesky,
    inverse,
    logdet,
    matmul,
    sqrt_spd,
)


def spd_strategy(n):
    """Random SPD matrices with condition number < 1e6."""
    return st.lists(
        st.floats(-2.0, 2.0, allow_nan=False), min_size=n * n, max_size=n * n
    ).map(lambda vals: np.asarray(vals).reshape(n, n)).map(
        lambda R: R @ R.T + 1e-3 * np.eye(n)
    ).filter(lambda A: np.linalg.cond(A) < 1e6)


def test_matmul_identity():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(matmul(np.eye(2), A), A)


def test_matmul_direct():
    out = matmul([[2.0, 1.0], [1.0, 2.0]], [[1.0], [0.0]])
    assert np.allclose(out, [[2.0], [1.0]])


def test_matmul_dimension_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.eye(2), np.ones((3, 2)))


def test_inverse_identity_and_2x2():
    assert np.allclose(inverse(np.eye(3)), np.eye(3))
    got = inverse([[2.0, 1.0], [1.0, 2.0]])
    assert np.allclose(got, np.array([[2.0, -1.0], [-1.0, 2.0]]) / 3.0, atol=1e-14)
    assert np.allclose(inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))


def test_inverse_singular_reports_condition():
    with pytest.raises(SingularMatrixError):
        inverse([[1.0, 1.0], [1.0, 1.0]])


def test_matmul_inverse_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(25):
        R = rng.standard_normal((3, 3))
        A = R @ R.T + 0.1 * np.eye(3)
        assert np.abs(matmul(A, inverse(A)) - np.eye(3)).max() < 1e-12


def test_cholesky_examples():
    assert np.allclose(cholesky(np.eye(2)), np.eye(2))
    assert np.allclose(cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    L = cholesky(A)
    assert np.abs(L @ L.T - A).max() < 1e-12
    assert np.abs(np.triu(L, 1)).max() == 0.0


def test_cholesky_rejects_non_spd():
    with pytest.raises(NotSPDError):
        cholesky([[1.0, 2.0], [2.0, 1.0]])


def test_sqrt_spd_examples():
    assert np.allclose(sqrt_spd(np.eye(2)), np.eye(2))
    assert np.allclose(sqrt_spd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    S = sqrt_spd(A)
    assert np.abs(S @ S - A).max() < 1e-12


def test_logdet_example():
    assert logdet(np.eye(2)) == 0.0
    assert abs(logdet([[2.0, 1.0], [1.0, 2.0]]) - math.log(3.0)) < 1e-14


@settings(max_examples=60, deadline=None)
@given(spd_strategy(2))
def test_spd_roundtrips_2x2(A):
    L = cholesky(A)
    assert np.abs(L @ L.T - A).max() < 1e-10
    S = sqrt_spd(A)
    assert np.abs(S @ S - A).max() < 1e-10
    assert abs(logdet(A) - 2.0 * np.log(np.diag(L)).sum()) < 1e-10
    assert np.abs(inverse(inverse(A)) - A).max() < 1e-10 * max(1.0, np.abs(A).max())


@settings(max_examples=30, deadline=None)
@given(spd_strategy(4))
def test_spd_roundtrips_4x4(A):
    L = cholesky(A)
    assert np.abs(L @ L.T - A).max() < 1e-10
    S = sqrt_spd(A)
    assert np.abs(S @ S - A).max() < 1e-9


def test_smallmat_validation():
    with pytest.raises(DimensionError):
        SmallMat(5, 5, tuple(range(25)))
    with pytest.raises(DimensionError):
        SmallMat(2, 2, (1.0, 2.0, 3.0))
    m = SmallMat.from_array([[2.0, 1.0], [1.0, 2.0]])
    assert m.is_spd() and m.is_symmetric()
    assert not SmallMat.from_array([[1.0, 2.0], [2.0, 1.0]]).is_spd()


def test_smallmat_matmul_operator():
    a = SmallMat.from_array([[2.0, 1.0], [1.0, 2.0]])
    b = SmallMat.from_array([[1.0], [0.0]])
    assert np.allclose((a @ b).array, [[2.0], [1.0]])
