"""Tests for the symmetric and general GBDT engines."""

import numpy as np
import pytest

from gbdt_engine import gbdt
from gbdt_engine.errors import (
    DimensionError,
    GridError,
    PoleError,
    SingularityError,
    SpectrumClashError,
    StructureError,
)
from gbdt_engine.gbdt import CoefficientProvider, PoleTerm, RationalSystemCoeffs, SymmetricHamiltonianSystem
from gbdt_engine.matroot import JordanForm
from gbdt_engine.numkit import frobenius
from gbdt_engine.scenario_generator import generate_scenario
from gbdt_engine.scenario_runner import system_from_spec
from gbdt_engine.snode import Signature, SNodeTriple, s_identity_residual

from .conftest import EXAMPLE_POLES, random_complex, random_symmetric_triple

SPAN = (0.0, 1.0)
STEP = 1e-3


@pytest.fixture
def trivial_trajectory(trivial_system):
    return gbdt.symmetric_trajectory(trivial_system, SPAN, STEP)


def _general_example():
    data = gbdt.GeneralGBDTData(
        A1=np.array([[0.5 + 1j, 0.2], [0.0, -0.5 + 1.5j]]),
        A2=np.array([[0.65 + 1j, 0.25], [0.0, -0.4 + 1.5j]]),
        Pi1_0=0.5 * np.eye(2),
        Pi2_0=np.array([[0.3, 0.0], [0.1, 0.2]]),
        S0=-np.eye(2),
    )
    coeffs = RationalSystemCoeffs(
        poly=[
            CoefficientProvider.constant([[0.1, 0.05], [0.0, -0.1]]),
            CoefficientProvider.constant(0.05 * np.eye(2)),
        ],
        poles=[
            PoleTerm(2.0, [CoefficientProvider.constant(np.diag([0.2, 0.1]))]),
            PoleTerm(-2.0, [
                CoefficientProvider.constant([[0.1, 0.1], [0.0, 0.2]]),
                CoefficientProvider.piecewise([0.5], [[[0.05, 0.0], [0.05, 0.0]], [[0.0, 0.05], [0.0, 0.05]]]),
            ]),
        ],
    )
    return data, coeffs


# -- coefficient providers ---------------------------------------------------

def test_piecewise_provider_switches_at_break():
    q = CoefficientProvider.piecewise([0.5], [np.eye(2), 2 * np.eye(2)])
    assert np.allclose(q(0.25), np.eye(2))
    assert np.allclose(q(0.5), 2 * np.eye(2))
    assert q.breaks == (0.5,)
    assert not q.is_constant


def test_piecewise_provider_validation():
    with pytest.raises(DimensionError):
        CoefficientProvider.piecewise([0.5], [np.eye(2)])
    with pytest.raises(DimensionError):
        CoefficientProvider.piecewise([0.5, 0.2], [np.eye(2)] * 3)
    with pytest.raises(DimensionError):
        CoefficientProvider.piecewise([0.5], [np.eye(2), np.eye(3)])


def test_rational_coefficients_reject_poles():
    coeffs = RationalSystemCoeffs(poles=[PoleTerm(1.0, [CoefficientProvider.constant(np.eye(2))])])
    with pytest.raises(PoleError):
        coeffs.G(0.0, 1.0)
    assert np.allclose(coeffs.G(0.0, 3.0), -0.5 * np.eye(2))


# -- symmetric engine --------------------------------------------------------

def test_trivial_closed_form_matches_rk4(trivial_system, trivial_trajectory):
    cf = gbdt.closed_form_trivial(trivial_system.triple)
    assert frobenius(cf.S0 - trivial_system.triple.S0) <= 1e-12
    for i in range(0, len(trivial_trajectory), 50):
        x = float(trivial_trajectory.xs[i])
        assert frobenius(cf.pi(x) - trivial_trajectory.Pis[i]) <= 1e-7
        assert frobenius(cf.s(x) - trivial_trajectory.Ss[i]) <= 1e-7


def test_trivial_closed_form_needs_both_signs(rng):
    triple = random_symmetric_triple(rng, 2, 2, 0)
    with pytest.raises(StructureError):
        gbdt.closed_form_trivial(triple)


def test_constant_beta_closed_form(rank_one_system):
    jf = JordanForm(u=np.eye(2), cells=((1 - 1j, 1), (-1 - 2j, 1)))
    beta1, beta2 = rank_one_system.betas[0](0.0), rank_one_system.betas[1](0.0)
    cb = gbdt.closed_form_constant_beta(rank_one_system.triple, beta1, beta2, *EXAMPLE_POLES, jf)
    traj = gbdt.symmetric_trajectory(rank_one_system, SPAN, STEP)

    assert frobenius(cb.pi(0.0) - rank_one_system.triple.Pi0) <= 1e-10
    for i in range(0, len(traj), 100):
        x = float(traj.xs[i])
        assert frobenius(cb.pi(x) - traj.Pis[i]) <= 1e-7
        assert cb.phi_residual(x) <= 1e-8


def test_constant_beta_rejects_bad_pair(example_triple):
    jf = JordanForm(u=np.eye(2), cells=((1 - 1j, 1), (-1 - 2j, 1)))
    with pytest.raises(StructureError):
        gbdt.closed_form_constant_beta(example_triple, np.array([[1.0, 0.0]]), np.array([[1.0, 1.0]]),
                                       *EXAMPLE_POLES, jf)


@pytest.mark.parametrize("n,m1,m2", [(2, 1, 1), (3, 1, 1), (3, 2, 1)])
def test_random_trajectory_preserves_structure(rng, n, m1, m2):
    triple = random_symmetric_triple(rng, n, m1, m2)
    betas = [CoefficientProvider.constant(random_complex(rng, (triple.sig.m, triple.sig.m), 0.5))
             for _ in triple.poles]
    sys = SymmetricHamiltonianSystem.from_triple(triple, betas)
    traj = gbdt.symmetric_trajectory(sys, (0.0, 0.5), STEP)

    assert not traj.truncated
    for Pi, S in zip(traj.Pis, traj.Ss):
        assert s_identity_residual(sys.A, S, Pi, sys.sig) <= 1e-8
        assert frobenius(S - S.conj().T) <= 1e-9
    assert gbdt.s_rate_max_eigenvalue(sys, traj.pi_trajectory()) <= 1e-10

    eigenvalues = np.array([np.linalg.eigvalsh((S + S.conj().T) / 2) for S in traj.Ss])
    assert np.all(np.diff(eigenvalues, axis=0) <= 1e-9)


GENERATED_CASES = [
    # n, m1, m2, r, seed
    (2, 1, 1, 1, 0), (2, 1, 1, 2, 1), (2, 2, 2, 2, 2), (3, 1, 1, 2, 3), (3, 2, 1, 2, 4),
    (3, 1, 2, 3, 5), (3, 3, 1, 1, 6), (4, 1, 1, 1, 7), (4, 2, 2, 2, 8), (4, 2, 1, 3, 9),
    (4, 1, 1, 3, 10), (5, 1, 1, 2, 11), (5, 2, 1, 1, 12), (5, 1, 3, 2, 13), (5, 2, 2, 2, 14),
    (6, 1, 1, 2, 15), (6, 2, 2, 1, 16), (6, 3, 1, 2, 17), (6, 1, 2, 3, 18), (6, 2, 2, 3, 19),
]


@pytest.mark.parametrize("n,m1,m2,r,seed", GENERATED_CASES)
def test_generated_scenarios_keep_invariants(n, m1, m2, r, seed):
    scenario = generate_scenario("gbdt-sym", n=n, m1=m1, m2=m2, r=r, seed=seed)
    sys = system_from_spec(scenario.symmetric)
    traj = gbdt.symmetric_trajectory(sys, SPAN, STEP)

    assert not traj.truncated
    assert len(traj) == 1001
    assert max(s_identity_residual(sys.A, S, Pi, sys.sig) for Pi, S in zip(traj.Pis, traj.Ss)) <= 1e-8
    assert gbdt.pole_j_unitarity(sys, traj) <= 1e-8
    for i in (0, 250, 500, 750, 1000):
        assert gbdt.similarity_residual(sys, traj.Pis[i], traj.Ss[i], float(traj.xs[i])) <= 1e-8


def test_scalar_transfer_function():
    # n = 1, A = [i], S = [1/2], Π = [1 0]: only the (1, 1) entry differs from I
    sig = Signature(1, 1)
    A, S, Pi = np.array([[1j]]), np.array([[0.5]]), np.array([[1.0, 0.0]])
    for z in (0.5 + 1j, -2.0, 3j):
        expected = np.diag([1 - 2j / (1j - z), 1.0])
        assert np.allclose(gbdt.symmetric_transfer_function(A, S, Pi, sig, z), expected, atol=1e-14)
        assert np.allclose(gbdt.transfer_function(A, S, Pi, -1j * Pi @ sig.matrix, z), expected, atol=1e-14)


def test_hyperbolic_rotation_is_j_unitary():
    t = 0.7
    w = np.array([[np.cosh(t), np.sinh(t)], [np.sinh(t), np.cosh(t)]])
    assert gbdt.j_unitarity_check(w, Signature(1, 1)) <= 1e-12
    assert gbdt.j_unitarity_check(np.diag([2.0, 1.0]), Signature(1, 1)) > 1.0
    with pytest.raises(DimensionError):
        gbdt.j_unitarity_check(np.eye(3), Signature(1, 1))


def test_pole_values_are_j_unitary(trivial_system, trivial_trajectory):
    assert gbdt.pole_j_unitarity(trivial_system, trivial_trajectory) <= 1e-8


def test_transfer_function_j_unitary_on_real_axis(trivial_system, trivial_trajectory):
    profile = gbdt.j_unitarity_profile(trivial_system, trivial_trajectory, [0.0, 1.0], points=10)
    assert set(profile) == {0.0, 1.0}
    assert max(profile.values()) <= 1e-6


def test_similarity_of_transformed_hamiltonians(rank_one_system):
    traj = gbdt.symmetric_trajectory(rank_one_system, SPAN, STEP)
    for i in (0, len(traj) // 2, len(traj) - 1):
        assert gbdt.similarity_residual(rank_one_system, traj.Pis[i], traj.Ss[i], float(traj.xs[i])) <= 1e-8


@pytest.mark.parametrize("z", [
    0.5 + 1j, -0.75 + 0.5j, 1j, -1j, 2 + 1j, -2 - 1j, 3 + 2j, -3 + 1j, 0.25 - 2j, 4j,
])
def test_darboux_relation(trivial_system, trivial_trajectory, z):
    assert gbdt.darboux_residual(trivial_system, trivial_trajectory, z, points=10) <= 1e-5
    assert gbdt.determinant_floor(trivial_system, trivial_trajectory, z) > 0


def test_transformed_solution_matches_product(rank_one_system):
    assert gbdt.transformed_solution_gap(rank_one_system, 0.5 + 1j, SPAN, STEP) <= 1e-6


def test_fundamental_solution_at_a_pole(trivial_system):
    with pytest.raises(PoleError):
        gbdt.fundamental_solution_initial(trivial_system, EXAMPLE_POLES[0], SPAN)
    with pytest.raises(PoleError):
        trivial_system.G(0.0, EXAMPLE_POLES[1])


def test_general_engine_reduces_to_symmetric(rank_one_system):
    residuals = gbdt.reduction_consistency(rank_one_system, (0.0, 0.5), STEP, points=5)
    assert set(residuals) == {"pi", "pi2", "s", "coefficients"}
    assert max(residuals.values()) <= 1e-8


def test_general_s_quadrature_matches_symmetric(rank_one_system):
    j = rank_one_system.sig.matrix
    pi = gbdt.symmetric_pi_ode(rank_one_system, (0.0, 0.5), STEP)
    pi2 = pi.map(lambda P: -1j * P @ j)
    general = gbdt.general_s_ode(rank_one_system.general_data(), rank_one_system.as_rational_coeffs(), pi, pi2)
    symmetric = gbdt.symmetric_s_ode(rank_one_system, pi)
    assert general.same_grid(symmetric)
    assert max(frobenius(G - S) for G, S in zip(general.samples, symmetric.samples)) <= 1e-10


def test_piecewise_betas_keep_identity(example_triple):
    beta = CoefficientProvider.piecewise([0.5], [np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]])])
    sys = SymmetricHamiltonianSystem.from_triple(example_triple, [beta, CoefficientProvider.constant(np.eye(2))])
    traj = gbdt.symmetric_trajectory(sys, SPAN, STEP)
    assert sys.breakpoints() == [0.5]
    worst = max(s_identity_residual(sys.A, S, Pi, sys.sig) for Pi, S in zip(traj.Pis, traj.Ss))
    assert worst <= 1e-8
    assert gbdt.darboux_residual(sys, traj, 0.5 + 1j, points=21) <= 1e-5


def test_smooth_betas_keep_identity(example_triple):
    beta = CoefficientProvider.from_callable(lambda x: [[1.0, x], [0.0, 1.0 + x * x]])
    sys = SymmetricHamiltonianSystem.from_triple(example_triple, [beta, CoefficientProvider.constant(np.eye(2))])
    assert not sys.betas_constant
    traj = gbdt.symmetric_trajectory(sys, (0.0, 0.5), STEP)
    worst = max(s_identity_residual(sys.A, S, Pi, sys.sig) for Pi, S in zip(traj.Pis, traj.Ss))
    assert worst <= 1e-8
    assert gbdt.transformed_solution_gap(sys, 0.5 + 1j, (0.0, 0.5), STEP) <= 1e-6


def test_pole_on_spectrum_is_rejected():
    sig = Signature(1, 1)
    A = np.diag([2.0 - 1j, -1.0 - 2j])
    Pi0 = np.ones((2, 2))
    triple = SNodeTriple(A=A, S0=-np.eye(2), Pi0=Pi0, sig=sig, poles=(2.0,))
    A_clash = np.diag([2.0 + 0j, -1.0 - 2j])
    clash = SNodeTriple(A=A_clash, S0=-np.eye(2), Pi0=Pi0, sig=sig, poles=(2.0,))
    SymmetricHamiltonianSystem.from_triple(triple, [CoefficientProvider.constant(np.eye(2))])
    with pytest.raises(SpectrumClashError) as excinfo:
        SymmetricHamiltonianSystem.from_triple(clash, [CoefficientProvider.constant(np.eye(2))])
    assert excinfo.value.value == 2.0


def test_singular_start_is_reported(example_triple):
    triple = SNodeTriple(A=example_triple.A, S0=np.zeros((2, 2)), Pi0=np.zeros((2, 2)), sig=example_triple.sig,
                         poles=example_triple.poles)
    sys = SymmetricHamiltonianSystem.from_triple(triple, [CoefficientProvider.constant(np.eye(2))] * 2)
    with pytest.raises(SingularityError):
        gbdt.symmetric_trajectory(sys, SPAN, 0.1)


def test_beta_count_must_match_poles(example_triple):
    with pytest.raises(DimensionError):
        SymmetricHamiltonianSystem.from_triple(example_triple, [CoefficientProvider.constant(np.eye(2))])


# -- general engine ----------------------------------------------------------

def test_general_identity_holds_along_trajectory():
    data, coeffs = _general_example()
    assert data.identity_residual() <= 1e-15
    traj = gbdt.general_trajectory(data, coeffs, SPAN, STEP)
    assert traj.Pi2s is not None
    for i in range(0, len(traj), 25):
        assert data.identity_residual(traj.Ss[i], traj.Pis[i], traj.Pi2s[i]) <= 1e-8


def test_general_transformed_coefficients():
    data, coeffs = _general_example()
    traj = gbdt.general_trajectory(data, coeffs, SPAN, STEP)
    i = len(traj) // 3
    q = gbdt.transformed_coeffs(data, coeffs, float(traj.xs[i]), traj.Pis[i], traj.Pi2s[i], traj.Ss[i])
    assert q.inverse_residual <= 1e-8
    assert len(q.poly) == 2
    assert [len(terms) for _, terms in q.poles] == [1, 2]


@pytest.mark.parametrize("z", [0.3 + 3j, -1.0 - 1j])
def test_general_darboux_relation(z):
    data, coeffs = _general_example()
    traj = gbdt.general_trajectory(data, coeffs, SPAN, STEP)
    assert gbdt.general_darboux_residual(data, coeffs, traj, z, points=21) <= 1e-5


def test_general_transfer_needs_pi2(trivial_trajectory):
    data, _ = _general_example()
    with pytest.raises(GridError):
        gbdt.general_transfer_function(data, trivial_trajectory, 0, 1j)


def test_general_pole_on_spectrum():
    data, _ = _general_example()
    coeffs = RationalSystemCoeffs(poles=[PoleTerm(0.5, [CoefficientProvider.constant(np.eye(2))])])
    data.A1 = np.diag([0.5 + 0j, -0.5 + 1.5j])
    with pytest.raises(SpectrumClashError):
        gbdt.general_trajectory(data, coeffs, SPAN, 0.1)
