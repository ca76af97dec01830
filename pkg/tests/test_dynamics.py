"""Tests for the several-variables dynamics and the conservation law."""

import numpy as np
import pytest

from gbdt_engine import dynamics, gbdt
from gbdt_engine.dynamics import MultiVarPoint, PsiEvaluator
from gbdt_engine.errors import DimensionError, GridError


@pytest.fixture
def trajectory(rank_one_system):
    return gbdt.symmetric_trajectory(rank_one_system, (0.0, 1.0), 1e-3)


@pytest.fixture
def evaluator(trajectory, rank_one_system):
    return PsiEvaluator(trajectory, rank_one_system)


@pytest.mark.parametrize("zetas", [(0.0, 0.0), (0.1, -0.2)])
def test_psi_solves_dynamical_system(evaluator, zetas):
    for x in (0.1, 0.5, 0.9):
        result = dynamics.pde_residual(evaluator, MultiVarPoint(x, zetas))
        assert result.residual <= 1e-4
        assert not result.one_sided
        assert max(dynamics.column_residuals(evaluator, MultiVarPoint(x, zetas))) <= 1e-4


def test_boundary_uses_one_sided_difference(evaluator):
    result = dynamics.pde_residual(evaluator, MultiVarPoint(0.0, (0.0, 0.0)))
    assert result.one_sided
    assert result.residual <= 1e-3


def test_zeta_derivative_matches_finite_difference(evaluator):
    pt = MultiVarPoint(0.4, (0.1, -0.2))
    for k in range(2):
        assert dynamics.zeta_fd_gap(evaluator, pt, k) <= 1e-6


def test_d1_identity(trajectory, rank_one_system):
    for x in (0.25, 0.75):
        assert dynamics.d1_identity_residual(trajectory, rank_one_system, x).residual <= 1e-4


def _halving_ratio(system, residual) -> float:
    residuals = [residual(gbdt.symmetric_trajectory(system, (0.0, 1.0), step)) for step in (0.02, 0.01)]
    return residuals[0] / residuals[1]


def test_d1_identity_is_second_order(rank_one_system):
    ratio = _halving_ratio(rank_one_system,
                           lambda traj: dynamics.d1_identity_residual(traj, rank_one_system, 0.5).residual)
    assert 3.0 <= ratio <= 6.0


@pytest.mark.parametrize("zetas", [(0.0, 0.0), (0.1, -0.2)])
def test_pde_residual_is_second_order(rank_one_system, zetas):
    def residual(traj):
        return dynamics.pde_residual(PsiEvaluator(traj, rank_one_system), MultiVarPoint(0.5, zetas)).residual

    assert 3.0 <= _halving_ratio(rank_one_system, residual) <= 6.0


def test_conservation_law_is_second_order(rank_one_system):
    ratio = _halving_ratio(rank_one_system,
                           lambda traj: dynamics.conservation_law_residual(traj, rank_one_system, 0.5).residual)
    assert 3.0 <= ratio <= 6.0


def test_conservation_law(trajectory, rank_one_system):
    for x in (0.2, 0.6):
        assert dynamics.conservation_law_residual(trajectory, rank_one_system, x).residual <= 1e-4
    assert dynamics.integrated_conservation_gap(trajectory, rank_one_system) <= 1e-4


def test_points_outside_span_are_rejected(evaluator):
    with pytest.raises(GridError):
        dynamics.psi_tilde(evaluator, MultiVarPoint(1.5, (0.0, 0.0)))
    with pytest.raises(GridError):
        dynamics.pde_residual(evaluator, MultiVarPoint(-0.1, (0.0, 0.0)))


def test_off_grid_x_snaps_to_nearest_sample(evaluator):
    near = dynamics.psi_tilde(evaluator, MultiVarPoint(0.50004, (0.0, 0.0)))
    on = dynamics.psi_tilde(evaluator, MultiVarPoint(0.5, (0.0, 0.0)))
    assert np.array_equal(near, on)


def test_zeta_count_must_match_poles(evaluator):
    with pytest.raises(DimensionError):
        dynamics.psi_tilde(evaluator, MultiVarPoint(0.5, (0.0,)))


def test_psi_samples_rows(evaluator):
    rows = dynamics.psi_samples(evaluator, [MultiVarPoint(0.5, (0.0, 0.0)), MultiVarPoint(0.6, (0.1, 0.1))])
    # x, two zetas and re/im pairs of a 2×2 matrix
    assert [len(row) for row in rows] == [11, 11]
    assert rows[1][:3] == [0.6, 0.1, 0.1]
