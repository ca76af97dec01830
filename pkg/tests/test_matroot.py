"""Tests for structured matrix roots, Halmos extensions and the discrete Dirac system."""

import numpy as np
import pytest
from hypothesis import given, seed, settings
from hypothesis import strategies as st

from gbdt_engine.errors import BranchPointError, ContractionError, DimensionError, SpectrumClashError, StructureError
from gbdt_engine.matroot import (
    BranchSpec,
    JordanForm,
    NilpotentToeplitz,
    SpectralFunction,
    commuting_root_family,
    dirac_transfer_product,
    discrete_dirac_evolve,
    evaluate_poly_on_nt,
    f_of_jordan,
    halmos_extension,
    matrix_root,
    positive_root_j,
    principal_root,
    shift_matrix,
    truncated_root_series,
    verblunsky_from_halmos,
    verify_root,
)
from gbdt_engine.snode import Signature

from .conftest import random_complex


def random_jordan(rng: np.random.Generator, n: int, max_cell: int = 4) -> JordanForm:
    sizes = []
    while sum(sizes) < n:
        sizes.append(int(rng.integers(1, min(max_cell, n - sum(sizes)) + 1)))
    cells = tuple((complex(*rng.uniform(-3, 3, 2)), p) for p in sizes)
    while True:
        u = np.eye(n) + random_complex(rng, (n, n), 0.5 / np.sqrt(n))
        if np.linalg.cond(u) <= 1e3:
            return JordanForm(u=u, cells=cells)


def random_function(rng: np.random.Generator, kind: str, jf: JordanForm) -> SpectralFunction:
    lowest = min(mu.real for mu in jf.eigenvalues)
    if kind == "shift":
        return SpectralFunction.shift(lowest - 1.0 - rng.uniform())
    if kind == "quadratic":
        # centre left of the spectrum keeps (μ − c)² + a² away from zero
        return SpectralFunction.quadratic(lowest - 2.0, 1.0 + rng.uniform(), "+")
    return SpectralFunction.resolvent_product(lowest - 1.0, lowest - 2.0)


def relative_root_residual(A, Q, fA, ell):
    report = verify_root(A, Q, fA, ell)
    scale = max(1.0, np.linalg.norm(fA))
    return report.root_residual / scale, report.commutation_residual / max(1.0, np.linalg.norm(A) * np.linalg.norm(Q))


def test_principal_root_and_branch_series():
    assert principal_root(-4, 2) == pytest.approx(2j)
    coefficients = truncated_root_series(4.0, 2, 0, 3)
    assert coefficients == pytest.approx([2.0, 0.25, -1 / 64])
    other = truncated_root_series(4.0, 2, 1, 3)
    assert other == pytest.approx([-c for c in coefficients])
    with pytest.raises(BranchPointError):
        truncated_root_series(0.0, 2, 0, 2)


def test_series_on_shift_reproduces_scalar_root():
    # (μ I + S_1)^{1/2} built from the truncated series squares back exactly
    mu, p = 3.0 + 1.0j, 4
    T = NilpotentToeplitz(p, (1.0 / mu,) + (0.0,) * (p - 2))
    root = principal_root(mu, 2) * evaluate_poly_on_nt(truncated_root_series(1.0, 2, 0, p), T)
    block = mu * np.eye(p) + shift_matrix(p)
    assert np.allclose(root @ root, block, atol=1e-12)


def test_counterexample_root_is_not_commuting():
    jf = JordanForm(u=np.eye(3), cells=((1.0, 3),))
    f = SpectralFunction.quadratic(1.0, 2.0, "+")
    A = jf.assemble()
    fA = f_of_jordan(jf, f)
    assert np.array_equal(fA, 4 * np.eye(3) + shift_matrix(3, 2))

    Q = np.array([[2, 0, 0.25], [0, -2, 0], [0, 0, 2]])
    report = verify_root(A, Q, fA, 2)
    assert report.root_residual <= 1e-14
    assert report.commutation_residual == pytest.approx(np.sqrt(32))
    assert report.commutation_residual > 0.2

    built = matrix_root(jf, f, BranchSpec.default(2, 1))
    assert np.allclose(built, 2 * np.eye(3) + shift_matrix(3, 2) / 4)
    assert verify_root(A, built, fA, 2).commutation_residual <= 1e-14


@pytest.mark.parametrize("ell", [2, 3, 5])
@pytest.mark.parametrize("kind", ["shift", "quadratic", "resolvent_product"])
def test_root_law_on_random_jordan_forms(rng, ell, kind):
    for _ in range(22):
        jf = random_jordan(rng, int(rng.integers(1, 9)))
        f = random_function(rng, kind, jf)
        branches = BranchSpec(ell, tuple(int(k) for k in rng.integers(0, ell, len(jf.cells))))
        Q = matrix_root(jf, f, branches)
        root, commutation = relative_root_residual(jf.assemble(), Q, f_of_jordan(jf, f), ell)
        assert root <= 1e-8
        assert commutation <= 1e-8


@seed(11)
@settings(max_examples=30, deadline=None)
@given(z1=st.floats(-10, -4), z2=st.floats(4, 10), ell=st.sampled_from([2, 3]))
def test_commuting_family_property(z1, z2, ell):
    jf = random_jordan(np.random.default_rng(3), 5)
    Q1 = commuting_root_family(jf, z1, ell)
    Q2 = commuting_root_family(jf, z2, ell)
    assert np.linalg.norm(Q1 @ Q2 - Q2 @ Q1) <= 1e-9 * max(1.0, np.linalg.norm(Q1) * np.linalg.norm(Q2))


def test_commuting_family_rejects_eigenvalue():
    jf = JordanForm(u=np.eye(2), cells=((1.0, 1), (2.0, 1)))
    with pytest.raises(SpectrumClashError):
        commuting_root_family(jf, 2.0, 2)


def test_matrix_root_branch_point():
    jf = JordanForm(u=np.eye(2), cells=((1.0, 2),))
    with pytest.raises(BranchPointError):
        matrix_root(jf, SpectralFunction.shift(1.0), BranchSpec.default(2, 1))


def test_resolvent_product_clash():
    jf = JordanForm(u=np.eye(1), cells=((2.0, 1),))
    with pytest.raises(SpectrumClashError):
        f_of_jordan(jf, SpectralFunction.resolvent_product(2.0, 3.0))


def test_jordan_form_validation_and_json():
    with pytest.raises(DimensionError):
        JordanForm(u=np.eye(3), cells=((1.0, 2),))
    with pytest.raises(StructureError):
        JordanForm(u=np.zeros((2, 2)), cells=((1.0, 1), (2.0, 1)))
    jf = JordanForm(u=np.eye(2), cells=((1 - 1j, 1), (-1 - 2j, 1)))
    assert JordanForm.from_json(jf.to_json()).cells == jf.cells


def test_jordan_from_diagonalizable(rng):
    u = np.eye(3) + random_complex(rng, (3, 3), 0.2)
    eigenvalues = [1.0, 2.0 + 1j, -1.5]
    M = u @ np.diag(eigenvalues) @ np.linalg.inv(u)
    jf = JordanForm.from_diagonalizable(M, eigenvalues)
    assert np.allclose(jf.assemble(), M, atol=1e-10)
    with pytest.raises(StructureError):
        JordanForm.from_diagonalizable(M, [1.0, 1.0 + 1e-9, -1.5])


def random_contraction(rng: np.random.Generator, m1: int, m2: int) -> np.ndarray:
    rho = random_complex(rng, (m1, m2))
    return rho * 0.9 * rng.uniform(0.05, 1.0) / np.linalg.norm(rho, 2)


def test_halmos_structure_and_roots(rng):
    for _ in range(50):
        m1, m2 = (int(v) for v in rng.integers(1, 4, 2))
        sig = Signature(m1, m2)
        j = sig.matrix
        rho = random_contraction(rng, m1, m2)
        C = halmos_extension(rho)
        assert np.allclose(C, C.conj().T)
        assert np.linalg.eigvalsh(C).min() > 0
        assert np.linalg.norm(C @ j @ C - j) <= 1e-10
        assert np.allclose(verblunsky_from_halmos(C, sig), rho, atol=1e-10)
        R = positive_root_j(C, 2, sig)
        assert np.linalg.norm(R @ j @ R - j) <= 1e-9
        assert np.allclose(R @ R, C, atol=1e-10)


def test_halmos_extension_of_one_half():
    sig = Signature(1, 1)
    C = halmos_extension(np.array([[0.5]]))
    assert np.allclose(C, (2 / np.sqrt(3)) * np.array([[1.0, 0.5], [0.5, 1.0]]), atol=1e-14)
    assert np.linalg.norm(C @ sig.matrix @ C - sig.matrix) <= 1e-12

    R = positive_root_j(C, 2, sig)
    assert np.allclose(R @ R, C, atol=1e-12)
    assert np.linalg.norm(R @ sig.matrix @ R - sig.matrix) <= 1e-12
    assert np.linalg.norm(np.linalg.matrix_power(positive_root_j(C, 4, sig), 4) - C) <= 1e-10


def test_positive_root_is_unique_under_nesting(rng):
    for _ in range(20):
        m1, m2 = (int(v) for v in rng.integers(1, 4, 2))
        sig = Signature(m1, m2)
        C = halmos_extension(random_contraction(rng, m1, m2))
        nested = positive_root_j(positive_root_j(C, 2, sig), 2, sig)
        assert np.allclose(nested, positive_root_j(C, 4, sig), atol=1e-12)


def test_halmos_rejects_non_contraction():
    with pytest.raises(ContractionError):
        halmos_extension(np.array([[1.0]]))


def test_positive_root_requires_j_structure():
    with pytest.raises(StructureError):
        positive_root_j(np.diag([2.0, 1.0]), 2, Signature(1, 1))


def test_dirac_evolution_matches_product(rng):
    sig = Signature(1, 2)
    Cs = [halmos_extension(random_contraction(rng, 1, 2)) for _ in range(6)]
    z = 0.7 - 0.4j
    y0 = random_complex(rng, (3,))
    W = dirac_transfer_product(Cs, z, sig)
    assert np.allclose(discrete_dirac_evolve(Cs, z, y0, sig), W @ y0, atol=1e-14)

    j = sig.matrix
    by_hand = np.eye(3)
    for C in Cs:
        by_hand = (np.eye(3) - (1j / z) * j @ C) @ by_hand
    assert np.allclose(W, by_hand, atol=1e-14)
