"""Several-variables dynamics.

ψ̃(x, ζ) = j Π(x)* S(x)⁻¹ exp{Σ_k ζ_k (A − c_k I)⁻¹} solves
    ∂ψ̃/∂x = i Σ_k j H̃_k(x) ∂ψ̃/∂ζ_k,
and Π*S⁻¹Π obeys the conservation law (Π*S⁻¹Π)' = Σ_k (H̃_k − H_k).
x-derivatives are finite differences on the trajectory grid; off-grid x
snaps to the nearest sample.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .errors import DimensionError, GridError
from .gbdt import GBDTTrajectory, SymmetricHamiltonianSystem, transformed_hamiltonians
from .numkit import ComplexMatrix, frobenius, mat_exp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MultiVarPoint:
    x: float
    zetas: Tuple[float, ...]


@dataclass
class PointResidual:
    residual: float
    one_sided: bool = False


@dataclass
class PsiEvaluator:
    """ψ̃ on a symmetric trajectory, nearest-sample policy in x."""
    trajectory: GBDTTrajectory
    system: SymmetricHamiltonianSystem
    _transformed: Dict[int, List[ComplexMatrix]] = field(default_factory=dict, repr=False)

    @property
    def resolvents(self) -> List[ComplexMatrix]:
        return [self.system.resolvents.resolvent(c) for c in self.system.poles]

    def index(self, x: float) -> int:
        xs = self.trajectory.xs
        lo, hi = min(xs[0], xs[-1]), max(xs[0], xs[-1])
        reach = self.trajectory.step / 2
        if x < lo - reach or x > hi + reach:
            raise GridError(f"x={x:.6g} lies outside the trajectory span [{lo:.6g}, {hi:.6g}]")
        return self.trajectory.index_of(x)

    def exponential(self, zetas: Sequence[float]) -> ComplexMatrix:
        if len(zetas) != self.system.r:
            raise DimensionError(f"need {self.system.r} zeta values, got {len(zetas)}")
        exponent = sum((z * R for z, R in zip(zetas, self.resolvents)),
                       np.zeros_like(self.system.A))
        return mat_exp(exponent)

    def prefactor(self, i: int) -> ComplexMatrix:
        """j Π(x_i)* S(x_i)⁻¹."""
        traj = self.trajectory
        return self.system.sig.matrix @ traj.Pis[i].conj().T @ traj.S_inv(i)

    def transformed(self, i: int) -> List[ComplexMatrix]:
        if i not in self._transformed:
            traj = self.trajectory
            self._transformed[i] = [
                t.H for t in transformed_hamiltonians(self.system, traj.Pis[i], traj.Ss[i], float(traj.xs[i]))
            ]
        return self._transformed[i]


def psi_tilde(ev: PsiEvaluator, pt: MultiVarPoint) -> ComplexMatrix:
    return ev.prefactor(ev.index(pt.x)) @ ev.exponential(pt.zetas)


def zeta_derivative(ev: PsiEvaluator, pt: MultiVarPoint, k: int) -> ComplexMatrix:
    """∂ψ̃/∂ζ_k = ψ̃ (A − c_k I)⁻¹."""
    return psi_tilde(ev, pt) @ ev.resolvents[k]


def zeta_fd_gap(ev: PsiEvaluator, pt: MultiVarPoint, k: int, h: float = 1e-6) -> float:
    """‖central difference in ζ_k − zeta_derivative‖."""
    plus = list(pt.zetas)
    minus = list(pt.zetas)
    plus[k] += h
    minus[k] -= h
    fd = (psi_tilde(ev, MultiVarPoint(pt.x, tuple(plus))) - psi_tilde(ev, MultiVarPoint(pt.x, tuple(minus)))) / (2 * h)
    return frobenius(fd - zeta_derivative(ev, pt, k))


def _grid_derivative(traj: GBDTTrajectory, i: int, value: Callable[[int], np.ndarray]) -> Tuple[np.ndarray, bool]:
    """Second-order finite difference of value(·) at sample i; one-sided at the ends."""
    xs = traj.xs
    n = len(xs)
    if n < 3:
        raise GridError("finite differences need at least three samples")
    if 0 < i < n - 1:
        h0, h1 = xs[i] - xs[i - 1], xs[i + 1] - xs[i]
        d = (-(h1 / (h0 * (h0 + h1))) * value(i - 1)
             + ((h1 - h0) / (h0 * h1)) * value(i)
             + (h0 / (h1 * (h0 + h1))) * value(i + 1))
        return d, False
    if i == 0:
        h = xs[1] - xs[0]
        return (-3 * value(0) + 4 * value(1) - value(2)) / (2 * h), True
    h = xs[-1] - xs[-2]
    return (3 * value(n - 1) - 4 * value(n - 2) + value(n - 3)) / (2 * h), True


def _warn_one_sided(name: str, x: float) -> None:
    logger.warning(f"{name} at boundary x={x:.6g} uses a one-sided difference")


def pde_residual(ev: PsiEvaluator, pt: MultiVarPoint) -> PointResidual:
    """‖∂ψ̃/∂x − i Σ_k j H̃_k ∂ψ̃/∂ζ_k‖."""
    i = ev.index(pt.x)
    E = ev.exponential(pt.zetas)
    d_prefactor, one_sided = _grid_derivative(ev.trajectory, i, ev.prefactor)
    if one_sided:
        _warn_one_sided("pde_residual", pt.x)
    psi = ev.prefactor(i) @ E
    j = ev.system.sig.matrix
    rhs = sum((j @ H @ psi @ R for H, R in zip(ev.transformed(i), ev.resolvents)), np.zeros_like(psi))
    return PointResidual(frobenius(d_prefactor @ E - 1j * rhs), one_sided)


def column_residuals(ev: PsiEvaluator, pt: MultiVarPoint) -> List[float]:
    """Per-column residuals of the dynamical system for ψ̃."""
    i = ev.index(pt.x)
    E = ev.exponential(pt.zetas)
    d_prefactor, _ = _grid_derivative(ev.trajectory, i, ev.prefactor)
    psi = ev.prefactor(i) @ E
    j = ev.system.sig.matrix
    rhs = sum((j @ H @ psi @ R for H, R in zip(ev.transformed(i), ev.resolvents)), np.zeros_like(psi))
    difference = d_prefactor @ E - 1j * rhs
    return [float(np.linalg.norm(difference[:, col])) for col in range(difference.shape[1])]


def d1_identity_residual(traj: GBDTTrajectory, sys: SymmetricHamiltonianSystem, x: float) -> PointResidual:
    """‖(jΠ*S⁻¹)' − i Σ_k j H̃_k jΠ*S⁻¹ (A − c_k I)⁻¹‖."""
    ev = PsiEvaluator(traj, sys)
    i = ev.index(x)
    derivative, one_sided = _grid_derivative(traj, i, ev.prefactor)
    if one_sided:
        _warn_one_sided("d1_identity_residual", x)
    M = ev.prefactor(i)
    j = sys.sig.matrix
    rhs = sum((j @ H @ M @ R for H, R in zip(ev.transformed(i), ev.resolvents)), np.zeros_like(M))
    return PointResidual(frobenius(derivative - 1j * rhs), one_sided)


def _conserved(traj: GBDTTrajectory, i: int) -> np.ndarray:
    return traj.Pis[i].conj().T @ traj.S_inv(i) @ traj.Pis[i]


def _hamiltonian_shift(sys: SymmetricHamiltonianSystem, traj: GBDTTrajectory, i: int) -> np.ndarray:
    x = float(traj.xs[i])
    transformed = transformed_hamiltonians(sys, traj.Pis[i], traj.Ss[i], x)
    return sum((t.H - H for t, H in zip(transformed, sys.hamiltonians(x))),
               np.zeros((sys.sig.m, sys.sig.m), dtype=np.complex128))


def conservation_law_residual(traj: GBDTTrajectory, sys: SymmetricHamiltonianSystem, x: float) -> PointResidual:
    """‖(Π*S⁻¹Π)' − Σ_k (H̃_k − H_k)‖."""
    i = PsiEvaluator(traj, sys).index(x)
    derivative, one_sided = _grid_derivative(traj, i, lambda k: _conserved(traj, k))
    if one_sided:
        _warn_one_sided("conservation_law_residual", x)
    return PointResidual(frobenius(derivative - _hamiltonian_shift(sys, traj, i)), one_sided)


def integrated_conservation_gap(traj: GBDTTrajectory, sys: SymmetricHamiltonianSystem) -> float:
    """max_x ‖Π*S⁻¹Π|_{x0}^{x} − ∫_{x0}^{x} Σ_k (H̃_k − H_k)‖, trapezoid rule."""
    start = _conserved(traj, 0)
    previous = _hamiltonian_shift(sys, traj, 0)
    integral = np.zeros_like(start)
    worst = 0.0
    for i in range(1, len(traj)):
        current = _hamiltonian_shift(sys, traj, i)
        integral = integral + (traj.xs[i] - traj.xs[i - 1]) * (previous + current) / 2
        worst = max(worst, frobenius(_conserved(traj, i) - start - integral))
        previous = current
    return worst


def psi_samples(ev: PsiEvaluator, points: Sequence[MultiVarPoint]) -> List[List[float]]:
    """Rows (x, ζ_1..ζ_r, ψ̃ entries as re/im pairs) for CSV export."""
    rows = []
    for pt in points:
        psi = psi_tilde(ev, pt)
        row = [float(pt.x), *[float(z) for z in pt.zetas]]
        for value in psi.ravel():
            row.extend([float(value.real), float(value.imag)])
        rows.append(row)
    return rows
