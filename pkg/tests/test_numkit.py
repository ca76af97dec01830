"""Tests for the dense linear algebra and RK4 kernels."""

import numpy as np
import pytest
from hypothesis import given, seed, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from gbdt_engine.errors import DimensionError, IntegrationError, SingularityError, StructureError
from gbdt_engine.numkit import (
    as_complex_matrix,
    cond_estimate,
    decode_complex,
    decode_complex_matrix,
    encode_complex_matrix,
    inverse,
    make_grid,
    mat_exp,
    rk4_integrate,
    solve_linear,
)

from .conftest import random_complex

MATRIX_DIMENSION = 4
unit_entries = st.floats(min_value=-0.5, max_value=0.5, allow_nan=False, allow_infinity=False)


@seed(7)
@settings(max_examples=50, deadline=None)
@given(
    real=arrays(np.float64, (MATRIX_DIMENSION, MATRIX_DIMENSION), elements=unit_entries),
    imag=arrays(np.float64, (MATRIX_DIMENSION, MATRIX_DIMENSION), elements=unit_entries),
)
def test_mat_exp_inverse_property(real, imag):
    M = real + 1j * imag
    if np.linalg.norm(M) > 1:
        M = M / np.linalg.norm(M)
    product = mat_exp(M) @ mat_exp(-M)
    assert np.allclose(product, np.eye(MATRIX_DIMENSION), atol=1e-10)


def test_mat_exp_matches_scipy_for_large_norm(rng):
    M = random_complex(rng, (5, 5), 3.0)
    assert np.allclose(mat_exp(M), expm(M), rtol=1e-10, atol=1e-10)


def test_mat_exp_of_nilpotent_is_finite_series():
    N = np.eye(3, k=1)
    assert np.allclose(mat_exp(N), np.eye(3) + N + N @ N / 2)


def test_mat_exp_of_diagonal_phase():
    assert np.allclose(mat_exp(np.diag([1j * np.pi, 0.0])), np.diag([-1.0, 1.0]), atol=1e-12)


def test_mat_exp_rejects_non_square():
    with pytest.raises(DimensionError):
        mat_exp(np.ones((2, 3)))


def test_solve_linear_residual(rng):
    for _ in range(100):
        n = int(rng.integers(1, 21))
        A = random_complex(rng, (n, n)) + 3 * np.sqrt(n) * np.eye(n)
        B = random_complex(rng, (n, int(rng.integers(1, 4))))
        X = solve_linear(A, B)
        assert np.linalg.norm(A @ X - B) <= 1e-12 * np.linalg.norm(B)


def test_solve_linear_diagonal():
    assert np.allclose(solve_linear(np.diag([2.0, 4.0]), np.eye(2)), np.diag([0.5, 0.25]), atol=1e-15)


def test_solve_linear_singular_reports_condition():
    A = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(SingularityError) as info:
        solve_linear(A, np.eye(2))
    assert info.value.cond > 1e12


def test_inverse_and_condition(rng):
    A = random_complex(rng, (4, 4)) + 3 * np.eye(4)
    assert np.allclose(inverse(A) @ A, np.eye(4), atol=1e-12)
    assert cond_estimate(np.eye(3)) == pytest.approx(1.0)
    assert cond_estimate(np.zeros((2, 2))) == float("inf")


def test_as_complex_matrix_validation():
    assert as_complex_matrix([1, 2]).shape == (1, 2)
    with pytest.raises(DimensionError):
        as_complex_matrix(np.zeros((0, 2)))
    with pytest.raises(StructureError):
        as_complex_matrix([[np.nan]])


def test_complex_codec():
    M = np.array([[1 + 2j, -0.5], [0, 3j]])
    assert np.array_equal(decode_complex_matrix(encode_complex_matrix(M)), M)
    assert decode_complex(2.5) == 2.5 + 0j
    with pytest.raises(DimensionError):
        decode_complex([1.0, 2.0, 3.0])


def test_make_grid_shortens_last_step_and_reverses():
    xs = make_grid([0.0, 1.0], 0.3)
    assert xs[0] == 0.0 and xs[-1] == 1.0
    assert np.allclose(np.diff(xs)[:-1], 0.3)
    assert np.diff(xs)[-1] == pytest.approx(0.1)
    backwards = make_grid([1.0, 0.0], 0.25)
    assert np.allclose(backwards, [1.0, 0.75, 0.5, 0.25, 0.0])


def test_rk4_matches_exponential_for_constant_matrix(rng):
    G = random_complex(rng, (3, 3))
    traj = rk4_integrate(lambda x, Y: G @ Y, np.eye(3), [0.0, 1.0], 1e-3)
    assert len(traj) == 1001
    assert np.allclose(traj.final, expm(G), atol=1e-9)


def test_rk4_error_ratio_on_step_halving():
    field = lambda x, Y: np.array([[np.cos(x) * Y[0, 0]]])
    exact = np.exp(np.sin(1.0))
    errors = [abs(rk4_integrate(field, [[1.0]], [0.0, 1.0], h).final[0, 0] - exact) for h in (0.1, 0.05)]
    assert 8 <= errors[0] / errors[1] <= 32


def test_rk4_reports_blow_up():
    with pytest.raises(IntegrationError) as info:
        rk4_integrate(lambda x, Y: Y ** 2 * 1e200, np.array([[1e200]]), [0.0, 1.0], 0.1)
    assert info.value.x is not None
