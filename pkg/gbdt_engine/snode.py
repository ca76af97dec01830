"""S-node data: the signature j, the triple {A, S(0), Π(0)} and the identity AS − SA* = iΠjΠ*."""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .errors import DimensionError, EigenvalueSymmetryError, SpectrumClashError, StructureError
from .numkit import (
    SINGULARITY_THRESHOLD,
    ComplexMatrix,
    as_complex_matrix,
    cond_estimate,
    decode_complex_matrix,
    encode_complex_matrix,
    frobenius,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Signature:
    """j = diag(I_{m1}, −I_{m2})."""
    m1: int
    m2: int

    def __post_init__(self) -> None:
        if self.m1 < 0 or self.m2 < 0 or self.m1 + self.m2 == 0:
            raise DimensionError(f"invalid signature ({self.m1}, {self.m2})")

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    @property
    def matrix(self) -> ComplexMatrix:
        return np.diag(np.concatenate([np.ones(self.m1), -np.ones(self.m2)])).astype(np.complex128)


@dataclass
class SNodeReport:
    identity_residual: float
    hermiticity_residual: float
    pole_clearance: float

    def passed(self, tol: float) -> bool:
        return self.identity_residual <= tol and self.hermiticity_residual <= tol and self.pole_clearance > 0


@dataclass(frozen=True)
class SNodeTriple:
    A: ComplexMatrix
    S0: ComplexMatrix
    Pi0: ComplexMatrix
    sig: Signature
    poles: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        A = as_complex_matrix(self.A, "A")
        S0 = as_complex_matrix(self.S0, "S0")
        Pi0 = as_complex_matrix(self.Pi0, "Pi0")
        n = A.shape[0]
        if A.shape != (n, n) or S0.shape != (n, n):
            raise DimensionError(f"A and S0 must be {n}×{n}, got {A.shape} and {S0.shape}")
        if Pi0.shape != (n, self.sig.m):
            raise DimensionError(f"Pi0 must be {n}×{self.sig.m}, got {Pi0.shape}")
        poles = tuple(float(c) for c in self.poles)
        if len(set(poles)) != len(poles):
            raise DimensionError("poles must be pairwise distinct")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "S0", S0)
        object.__setattr__(self, "Pi0", Pi0)
        object.__setattr__(self, "poles", poles)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def is_valid(self, tol: float = 1e-10) -> bool:
        return validate_snode(self, tol).passed(tol)

    def to_json(self) -> Dict[str, Any]:
        return {
            "A": encode_complex_matrix(self.A),
            "S0": encode_complex_matrix(self.S0),
            "Pi0": encode_complex_matrix(self.Pi0),
            "m1": self.sig.m1,
            "m2": self.sig.m2,
            "poles": list(self.poles),
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "SNodeTriple":
        return cls(
            A=decode_complex_matrix(data["A"], "A"),
            S0=decode_complex_matrix(data["S0"], "S0"),
            Pi0=decode_complex_matrix(data["Pi0"], "Pi0"),
            sig=Signature(int(data["m1"]), int(data["m2"])),
            poles=tuple(data.get("poles", [])),
        )


def s_identity_residual(A: ArrayLike, S: ArrayLike, Pi: ArrayLike, sig: Signature) -> float:
    """‖AS − SA* − iΠjΠ*‖ / (1 + ‖S‖)."""
    A, S, Pi = (np.asarray(M, dtype=np.complex128) for M in (A, S, Pi))
    if A.shape != S.shape or Pi.shape != (A.shape[0], sig.m):
        raise DimensionError(f"non-conformable A {A.shape}, S {S.shape}, Pi {Pi.shape}")
    lhs = A @ S - S @ A.conj().T
    rhs = 1j * Pi @ sig.matrix @ Pi.conj().T
    return frobenius(lhs - rhs) / (1.0 + frobenius(S))


def pole_clearance(A: ArrayLike, poles: Sequence[float]) -> float:
    """min_k σ_min(A − c_k I); a lower bound on the distance from the poles to σ(A)."""
    A = np.asarray(A, dtype=np.complex128)
    if not poles:
        return math.inf
    n = A.shape[0]
    return float(min(np.linalg.svd(A - c * np.eye(n), compute_uv=False)[-1] for c in poles))


def validate_snode(t: SNodeTriple, tol: float = 1e-10) -> SNodeReport:
    report = SNodeReport(
        identity_residual=s_identity_residual(t.A, t.S0, t.Pi0, t.sig),
        hermiticity_residual=frobenius(t.S0 - t.S0.conj().T),
        pole_clearance=pole_clearance(t.A, t.poles),
    )
    if report.pole_clearance <= tol:
        logger.warning(f"pole within {report.pole_clearance:.2e} of the spectrum of A")
    return report


def require_pole_clearance(A: ArrayLike, poles: Sequence[float], tol: float = 1e-12) -> None:
    """Raise SpectrumClashError naming the first pole that sits on σ(A)."""
    A = np.asarray(A, dtype=np.complex128)
    n = A.shape[0]
    for c in poles:
        if np.linalg.svd(A - c * np.eye(n), compute_uv=False)[-1] <= tol * max(1.0, frobenius(A)):
            raise SpectrumClashError("pole lies on the spectrum of A", c)


def solve_sylvester(A: ArrayLike, RHS: ArrayLike, max_cond: float = SINGULARITY_THRESHOLD) -> ComplexMatrix:
    """Unique C with AC − CA* = RHS, by vectorisation to an n²×n² system."""
    A = as_complex_matrix(A, "A")
    RHS = as_complex_matrix(RHS, "RHS")
    n = A.shape[0]
    if A.shape != (n, n) or RHS.shape != (n, n):
        raise DimensionError(f"A and RHS must be {n}×{n}")

    eye = np.eye(n, dtype=np.complex128)
    K = np.kron(eye, A) - np.kron(A.conj(), eye)
    cond = cond_estimate(K)
    if cond > max_cond:
        raise EigenvalueSymmetryError(
            f"σ(A) and σ(A*) intersect: Sylvester operator is singular (cond ≈ {cond:.3e})"
        )
    vec = np.linalg.solve(K, RHS.reshape(-1, order="F"))
    return vec.reshape((n, n), order="F")


def recover_S_from_identity(A: ArrayLike, Pi: ArrayLike, sig: Signature, tol: float = 1e-10) -> ComplexMatrix:
    """S solving AS − SA* = iΠjΠ*, symmetrised when it is Hermitian within tol."""
    Pi = as_complex_matrix(Pi, "Pi")
    S = solve_sylvester(A, 1j * Pi @ sig.matrix @ Pi.conj().T)
    asymmetry = frobenius(S - S.conj().T)
    if asymmetry > tol * (1.0 + frobenius(S)):
        raise StructureError(f"recovered S is not Hermitian (‖S − S*‖ = {asymmetry:.3e})")
    return (S + S.conj().T) / 2
