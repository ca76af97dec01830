"""Structured matrix roots.

Roots of f(A) are built cell by cell on a given Jordan form, so they commute
with A. Also: commuting root families Q(z) of A - zI, positive roots of
j-structured matrices, Halmos extensions and the discrete Dirac recursion.
"""

import cmath
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import block_diag, toeplitz

from .errors import (
    BranchPointError,
    ContractionError,
    DefinitenessError,
    DimensionError,
    PoleError,
    SpectrumClashError,
    StructureError,
)
from .numkit import (
    ComplexMatrix,
    as_complex_matrix,
    cond_estimate,
    decode_complex_matrix,
    encode_complex_matrix,
    frobenius,
    inverse,
)
from .snode import Signature

logger = logging.getLogger(__name__)

# Relative tolerance for the CjC = j precondition on floating-point inputs.
STRUCTURE_TOLERANCE = 1e-8
# Eigenvalue separation required by JordanForm.from_diagonalizable.
MIN_EIGENVALUE_SEPARATION = 1e-6

_CLASH_TOLERANCE = 1e-14


def shift_matrix(p: int, i: int = 1) -> ComplexMatrix:
    """The p×p shift S_i with ones on the i-th superdiagonal (zero for i ≥ p)."""
    return np.eye(p, k=i, dtype=np.complex128)


def upper_toeplitz(first_row: Sequence[complex]) -> ComplexMatrix:
    """Upper-triangular Toeplitz matrix with the given first row."""
    row = np.asarray(first_row, dtype=np.complex128)
    column = np.zeros_like(row)
    column[0] = row[0]
    return toeplitz(column, row)


@dataclass(frozen=True)
class JordanForm:
    """A = u · diag(μ_i I + S_1) · u⁻¹ with cells listed as (μ_i, p_i)."""
    u: ComplexMatrix
    cells: Tuple[Tuple[complex, int], ...]
    _u_inv: ComplexMatrix = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        u = as_complex_matrix(self.u, "u")
        cells = tuple((complex(mu), int(p)) for mu, p in self.cells)
        if u.shape[0] != u.shape[1]:
            raise DimensionError(f"u must be square, got {u.shape}")
        if any(p < 1 for _, p in cells):
            raise DimensionError("Jordan cell sizes must be ≥ 1")
        if sum(p for _, p in cells) != u.shape[0]:
            raise DimensionError(f"cell sizes sum to {sum(p for _, p in cells)}, u has order {u.shape[0]}")
        if not math.isfinite(cond_estimate(u)):
            raise StructureError("u is singular")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "_u_inv", inverse(u))

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def eigenvalues(self) -> List[complex]:
        return [mu for mu, _ in self.cells]

    @property
    def max_cell(self) -> int:
        return max(p for _, p in self.cells)

    def conjugate(self, blocks: Sequence[np.ndarray]) -> ComplexMatrix:
        """u · diag(blocks) · u⁻¹."""
        return self.u @ block_diag(*blocks).astype(np.complex128) @ self._u_inv

    def jordan_matrix(self) -> ComplexMatrix:
        return block_diag(*[mu * np.eye(p) + shift_matrix(p) for mu, p in self.cells]).astype(np.complex128)

    def assemble(self) -> ComplexMatrix:
        return self.u @ self.jordan_matrix() @ self._u_inv

    @classmethod
    def from_diagonalizable(cls, M: ArrayLike, eigenvalues: Sequence[complex],
                            min_separation: float = MIN_EIGENVALUE_SEPARATION) -> "JordanForm":
        """Diagonal Jordan data from a diagonalizable M and its exactly known eigenvalues."""
        M = as_complex_matrix(M, "M")
        n = M.shape[0]
        eigenvalues = [complex(mu) for mu in eigenvalues]
        if len(eigenvalues) != n or M.shape[1] != n:
            raise DimensionError(f"need {n} eigenvalues for a {M.shape} matrix")
        for a in range(n):
            for b in range(a + 1, n):
                if abs(eigenvalues[a] - eigenvalues[b]) < min_separation:
                    raise StructureError(
                        f"eigenvalues {eigenvalues[a]} and {eigenvalues[b]} closer than {min_separation}"
                    )

        columns = []
        for mu in eigenvalues:
            _, _, vh = np.linalg.svd(M - mu * np.eye(n))
            columns.append(vh[-1].conj())
        jf = cls(u=np.column_stack(columns), cells=tuple((mu, 1) for mu in eigenvalues))

        residual = frobenius(jf.assemble() - M)
        if residual > 1e-10 * max(1.0, frobenius(M)):
            raise StructureError(f"eigen-data does not reproduce M (residual {residual:.2e})")
        return jf

    def to_json(self) -> Dict[str, Any]:
        return {
            "u": encode_complex_matrix(self.u),
            "cells": [[mu.real, mu.imag, p] for mu, p in self.cells],
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "JordanForm":
        cells = tuple((complex(c[0], c[1]), int(c[2])) for c in data["cells"])
        return cls(u=decode_complex_matrix(data["u"], "u"), cells=cells)


@dataclass(frozen=True)
class BranchSpec:
    """Root order ℓ and the branch index k_i chosen in every Jordan cell."""
    ell: int
    k_per_cell: Tuple[int, ...]

    def __post_init__(self) -> None:
        if self.ell < 2:
            raise DimensionError(f"root order must be ≥ 2, got {self.ell}")
        ks = tuple(int(k) for k in self.k_per_cell)
        if any(not 0 <= k < self.ell for k in ks):
            raise DimensionError(f"branch indices must lie in [0, {self.ell})")
        object.__setattr__(self, "k_per_cell", ks)

    @classmethod
    def default(cls, ell: int, n_cells: int) -> "BranchSpec":
        return cls(ell=ell, k_per_cell=(0,) * n_cells)


class FunctionKind(str, Enum):
    SHIFT = "shift"
    QUADRATIC = "quadratic"
    RESOLVENT_PRODUCT = "resolvent_product"
    CUSTOM = "custom"


DerivativeOracle = Callable[[complex, int], Sequence[complex]]


@dataclass(frozen=True)
class SpectralFunction:
    """f(λ) together with its derivatives at the eigenvalues of A."""
    kind: FunctionKind
    params: Tuple[float, ...] = ()
    oracle: Optional[DerivativeOracle] = None

    @classmethod
    def shift(cls, z: complex) -> "SpectralFunction":
        """f(λ) = λ − z."""
        return cls(FunctionKind.SHIFT, (z,))

    @classmethod
    def quadratic(cls, c: float, a: complex, sign: str = "+") -> "SpectralFunction":
        """f(λ) = (λ − c)² ± |a|²."""
        if sign not in ("+", "-"):
            raise ValueError("sign must be '+' or '-'")
        return cls(FunctionKind.QUADRATIC, (c, abs(a) ** 2 if sign == "+" else -abs(a) ** 2))

    @classmethod
    def resolvent_product(cls, c1: complex, c2: complex) -> "SpectralFunction":
        """f(λ) = (λ − c1)⁻¹(λ − c2)⁻¹."""
        return cls(FunctionKind.RESOLVENT_PRODUCT, (c1, c2))

    @classmethod
    def custom(cls, oracle: DerivativeOracle) -> "SpectralFunction":
        """oracle(μ, count) returns f(μ), f'(μ), ..., f^{(count-1)}(μ)."""
        return cls(FunctionKind.CUSTOM, (), oracle)

    def derivatives(self, mu: complex, count: int) -> List[complex]:
        """f^{(j)}(μ) for j = 0 .. count-1."""
        mu = complex(mu)
        if self.kind == FunctionKind.SHIFT:
            values = [mu - self.params[0], 1.0]
        elif self.kind == FunctionKind.QUADRATIC:
            c, offset = self.params
            values = [(mu - c) ** 2 + offset, 2 * (mu - c), 2.0]
        elif self.kind == FunctionKind.RESOLVENT_PRODUCT:
            values = self._resolvent_product_derivatives(mu, count)
        else:
            values = list(self.oracle(mu, count))
            if len(values) < count:
                raise StructureError(f"derivative oracle returned {len(values)} values, {count} needed")
        values = [complex(v) for v in values[:count]]
        return values + [0j] * (count - len(values))

    def _resolvent_product_derivatives(self, mu: complex, count: int) -> List[complex]:
        c1, c2 = self.params
        for c in (c1, c2):
            if abs(mu - c) <= _CLASH_TOLERANCE * max(1.0, abs(mu)):
                raise SpectrumClashError("resolvent pole lies on the spectrum of A", mu)

        def resolvent_derivative(c: complex, i: int) -> complex:
            return (-1) ** i * math.factorial(i) * (mu - c) ** (-i - 1)

        return [
            sum(math.comb(j, i) * resolvent_derivative(c1, i) * resolvent_derivative(c2, j - i) for i in range(j + 1))
            for j in range(count)
        ]

    def __call__(self, lam: complex) -> complex:
        return self.derivatives(lam, 1)[0]


@dataclass(frozen=True)
class NilpotentToeplitz:
    """T = Σ t_i S_i, strictly upper-triangular Toeplitz of order p."""
    size: int
    entries: Tuple[complex, ...]

    def __post_init__(self) -> None:
        if self.size < 1:
            raise DimensionError("size must be ≥ 1")
        if len(self.entries) != self.size - 1:
            raise DimensionError(f"need {self.size - 1} entries t_1..t_(p-1), got {len(self.entries)}")

    def matrix(self) -> ComplexMatrix:
        return upper_toeplitz([0j, *self.entries])


@dataclass
class RootReport:
    root_residual: float
    commutation_residual: float


def principal_root(mu: complex, ell: int) -> complex:
    """ξ0 = |μ|^{1/ℓ} e^{i arg(μ)/ℓ} with arg(μ) in (−π, π]."""
    arg = cmath.phase(mu)
    if arg <= -math.pi:
        arg = math.pi
    return abs(mu) ** (1.0 / ell) * cmath.exp(1j * arg / ell)


def truncated_root_series(mu: complex, ell: int, k: int, p: int) -> List[complex]:
    """First p Taylor coefficients of the branch k of (μ + λ)^{1/ℓ} at λ = 0."""
    mu = complex(mu)
    if mu == 0:
        raise BranchPointError("root series needs a nonzero eigenvalue")
    if not 0 <= k < ell:
        raise DimensionError(f"branch index {k} outside [0, {ell})")
    if p < 1:
        raise DimensionError("p must be ≥ 1")

    root = cmath.exp(2j * math.pi * k / ell) * principal_root(mu, ell)
    coefficients = []
    binomial = 1.0 + 0j
    for j in range(p):
        coefficients.append(binomial * root * mu ** (-j))
        binomial *= (1.0 / ell - j) / (j + 1)
    return coefficients


def evaluate_poly_on_nt(coeffs: Sequence[complex], T: NilpotentToeplitz) -> ComplexMatrix:
    """Σ coeffs_i T^i; powers from p on vanish."""
    if len(coeffs) < 1:
        raise DimensionError("at least one coefficient is required")
    M = T.matrix()
    result = np.zeros((T.size, T.size), dtype=np.complex128)
    power = np.eye(T.size, dtype=np.complex128)
    for c in coeffs[: T.size]:
        result += c * power
        power = power @ M
    return result


def _taylor_row(derivatives: Sequence[complex]) -> List[complex]:
    return [d / math.factorial(j) for j, d in enumerate(derivatives)]


def f_of_jordan(jf: JordanForm, f: SpectralFunction) -> ComplexMatrix:
    """f(A) = u · diag(f(𝒜_i)) · u⁻¹ with each f(𝒜_i) a Taylor polynomial in S_1."""
    blocks = [upper_toeplitz(_taylor_row(f.derivatives(mu, p))) for mu, p in jf.cells]
    return jf.conjugate(blocks)


def matrix_root(jf: JordanForm, f: SpectralFunction, spec: BranchSpec) -> ComplexMatrix:
    """An ℓ-th root Q of f(A) with AQ = QA, built block by block."""
    if len(spec.k_per_cell) != len(jf.cells):
        raise DimensionError(f"branch spec has {len(spec.k_per_cell)} entries for {len(jf.cells)} cells")

    blocks = []
    for (mu, p), k in zip(jf.cells, spec.k_per_cell):
        row = _taylor_row(f.derivatives(mu, p))
        center = row[0]
        if abs(center) <= _CLASH_TOLERANCE:
            raise BranchPointError(f"f vanishes at eigenvalue {mu}")
        T = NilpotentToeplitz(p, tuple(row[1:]))
        blocks.append(evaluate_poly_on_nt(truncated_root_series(center, spec.ell, k, p), T))
    logger.debug(f"built {spec.ell}-th root on {len(blocks)} Jordan cells")
    return jf.conjugate(blocks)


def verify_root(A: ArrayLike, Q: ArrayLike, fA: ArrayLike, ell: int) -> RootReport:
    A, Q, fA = (np.asarray(M, dtype=np.complex128) for M in (A, Q, fA))
    if not (A.shape == Q.shape == fA.shape) or A.shape[0] != A.shape[1]:
        raise DimensionError("A, Q and f(A) must be square and of equal size")
    return RootReport(
        root_residual=frobenius(np.linalg.matrix_power(Q, ell) - fA),
        commutation_residual=frobenius(A @ Q - Q @ A),
    )


def commuting_root_family(jf: JordanForm, z: float, ell: int,
                          branches: Optional[BranchSpec] = None) -> ComplexMatrix:
    """Q(z) with Q(z)^ℓ = A − zI; members for different z commute because u is fixed."""
    for mu in jf.eigenvalues:
        if abs(mu - z) <= _CLASH_TOLERANCE * max(1.0, abs(mu)):
            raise SpectrumClashError("z lies on the spectrum of A", mu)
    spec = branches or BranchSpec.default(ell, len(jf.cells))
    return matrix_root(jf, SpectralFunction.shift(z), spec)


def _hermitian_power(H: np.ndarray, power: float) -> ComplexMatrix:
    w, V = np.linalg.eigh(H)
    if w.min() <= 0:
        raise DefinitenessError(f"matrix is not positive definite (min eigenvalue {w.min():.3e})")
    return (V * w ** power) @ V.conj().T


def halmos_extension(rho: ArrayLike) -> ComplexMatrix:
    """C = diag((I−ρρ*)^{-1/2}, (I−ρ*ρ)^{-1/2}) · [[I, ρ], [ρ*, I]] for a strict contraction ρ."""
    rho = as_complex_matrix(rho, "rho")
    m1, m2 = rho.shape
    norm = float(np.linalg.norm(rho, 2))
    if norm >= 1.0:
        raise ContractionError(f"‖ρ‖ = {norm:.6g} is not a strict contraction")

    d1 = _hermitian_power(np.eye(m1) - rho @ rho.conj().T, -0.5)
    d2 = _hermitian_power(np.eye(m2) - rho.conj().T @ rho, -0.5)
    C = block_diag(d1, d2) @ np.block([[np.eye(m1), rho], [rho.conj().T, np.eye(m2)]])
    return (C + C.conj().T) / 2


def verblunsky_from_halmos(C: ArrayLike, sig: Signature) -> ComplexMatrix:
    """Recover ρ from a Halmos matrix: ρ = C_11⁻¹ C_12."""
    C = as_complex_matrix(C, "C")
    m1 = sig.m1
    return inverse(C[:m1, :m1]) @ C[:m1, m1:]


def check_j_structure(C: np.ndarray, sig: Signature, tol: float = STRUCTURE_TOLERANCE) -> None:
    """Raise unless C is Hermitian positive definite with CjC = j."""
    if C.shape != (sig.m, sig.m):
        raise DimensionError(f"C has shape {C.shape}, signature needs {sig.m}×{sig.m}")
    scale = max(1.0, frobenius(C))
    if frobenius(C - C.conj().T) > tol * scale:
        raise DefinitenessError("C is not Hermitian")
    if np.linalg.eigvalsh((C + C.conj().T) / 2).min() <= 0:
        raise DefinitenessError("C is not positive definite")
    j = sig.matrix
    if frobenius(C @ j @ C - j) > tol * max(1.0, frobenius(C) ** 2):
        raise StructureError("C does not satisfy CjC = j")


def positive_root_j(C: ArrayLike, ell: int, sig: Signature, tol: float = STRUCTURE_TOLERANCE) -> ComplexMatrix:
    """The unique positive ℓ-th root of C > 0 with CjC = j; it keeps the j-structure."""
    C = as_complex_matrix(C, "C")
    check_j_structure(C, sig, tol)
    if ell < 1:
        raise DimensionError("root order must be ≥ 1")
    return _hermitian_power((C + C.conj().T) / 2, 1.0 / ell)


def _dirac_factor(C: np.ndarray, z: complex, j: np.ndarray) -> ComplexMatrix:
    return np.eye(j.shape[0], dtype=np.complex128) - (1j / z) * (j @ C)


def dirac_transfer_product(Cs: Sequence[ArrayLike], z: complex, sig: Signature) -> ComplexMatrix:
    """Ordered product (I − (i/z) j C_{N-1}) ··· (I − (i/z) j C_0)."""
    if z == 0:
        raise PoleError("discrete Dirac system has a pole at z = 0")
    j = sig.matrix
    W = np.eye(sig.m, dtype=np.complex128)
    for C in Cs:
        W = _dirac_factor(np.asarray(C, dtype=np.complex128), z, j) @ W
    return W


def discrete_dirac_evolve(Cs: Sequence[ArrayLike], z: complex, y0: ArrayLike, sig: Signature) -> np.ndarray:
    """y_N from y_{k+1} = (I − (i/z) j C_k) y_k."""
    if z == 0:
        raise PoleError("discrete Dirac system has a pole at z = 0")
    y = np.array(y0, dtype=np.complex128).reshape(-1)
    if y.shape[0] != sig.m:
        raise DimensionError(f"y0 has length {y.shape[0]}, expected {sig.m}")
    j = sig.matrix
    for C in Cs:
        C = as_complex_matrix(C, "C")
        check_j_structure(C, sig)
        y = _dirac_factor(C, z, j) @ y
    return y
