"""GBDT engine.

General multi-pole transformation (A1, A2, Π1, Π2, S) for systems
    w' = G(x, z) w,  G = −(Σ_k z^k q_k(x) + Σ_s Σ_k (z − c_s)^{-k} q_sk(x)),
and its symmetric S-node specialisation for generalised Hamiltonian systems
    w' = i j Σ_k (z − c_k)^{-1} H_k(x) w,  H_k = β_k* β_k.
"""

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from .errors import (
    DimensionError,
    GridError,
    PoleError,
    SingularityError,
    SpectrumClashError,
    StructureError,
)
from .matroot import BranchSpec, JordanForm, SpectralFunction, matrix_root
from .numkit import (
    DEFAULT_STEP,
    SINGULARITY_THRESHOLD,
    ComplexMatrix,
    Trajectory,
    as_complex_matrix,
    cond_estimate,
    decode_complex_matrix,
    frobenius,
    inverse,
    make_grid,
    mat_exp,
    rk4_integrate,
    rk4_step,
    solve_linear,
    step_ends,
)
from .schemas import ProviderSpec
from .snode import Signature, SNodeTriple, require_pole_clearance, solve_sylvester

logger = logging.getLogger(__name__)

# Central-difference step used by the Darboux checks.
FD_STEP = 1e-5
# (I − X_{−1})(I + Y_{−1}) = I is flagged above this residual.
INVERSE_CHECK_TOLERANCE = 1e-8


class CoefficientProvider:
    """x ↦ matrix: a constant, a piecewise-constant table or any callable."""

    def __init__(self, func: Callable[[float], np.ndarray], breaks: Sequence[float] = (),
                 constant: Optional[np.ndarray] = None):
        self._func = func
        self.breaks: Tuple[float, ...] = tuple(float(b) for b in breaks)
        self._constant = constant

    @classmethod
    def constant(cls, M: ArrayLike) -> "CoefficientProvider":
        value = as_complex_matrix(M, "coefficient")
        return cls(lambda x: value, constant=value)

    @classmethod
    def piecewise(cls, breaks: Sequence[float], values: Sequence[ArrayLike]) -> "CoefficientProvider":
        if len(values) != len(breaks) + 1:
            raise DimensionError("piecewise provider needs len(values) == len(breaks) + 1")
        if list(breaks) != sorted(breaks):
            raise DimensionError("breaks must be increasing")
        tables = [as_complex_matrix(v, "coefficient") for v in values]
        if len({t.shape for t in tables}) != 1:
            raise DimensionError("piecewise values must share one shape")
        cuts = [float(b) for b in breaks]
        return cls(lambda x: tables[bisect.bisect_right(cuts, x)], breaks=cuts)

    @classmethod
    def from_callable(cls, func: Callable[[float], ArrayLike]) -> "CoefficientProvider":
        return cls(lambda x: np.asarray(func(x), dtype=np.complex128))

    @classmethod
    def from_spec(cls, spec: ProviderSpec) -> "CoefficientProvider":
        if spec.constant is not None:
            return cls.constant(decode_complex_matrix(spec.constant, "constant"))
        return cls.piecewise(spec.breaks, [decode_complex_matrix(v, "values") for v in spec.values])

    @property
    def is_constant(self) -> bool:
        return self._constant is not None

    def __call__(self, x: float) -> np.ndarray:
        return self._func(x)


@dataclass
class PoleTerm:
    """Pole c with coefficients q_{s1} .. q_{s r_s} (list index i ↔ power i + 1)."""
    c: float
    terms: List[CoefficientProvider]

    @property
    def multiplicity(self) -> int:
        return len(self.terms)


@dataclass
class RationalSystemCoeffs:
    poly: List[CoefficientProvider] = field(default_factory=list)
    poles: List[PoleTerm] = field(default_factory=list)

    def __post_init__(self) -> None:
        centers = [p.c for p in self.poles]
        if len(set(centers)) != len(centers):
            raise DimensionError("pole locations must be distinct")
        if any(p.multiplicity < 1 for p in self.poles):
            raise DimensionError("every pole needs at least one coefficient")

    def breakpoints(self) -> List[float]:
        providers = list(self.poly) + [q for p in self.poles for q in p.terms]
        return sorted({b for q in providers for b in q.breaks})

    def G(self, x: float, z: complex) -> ComplexMatrix:
        for pole in self.poles:
            if z == pole.c:
                raise PoleError(f"z = {z} is a pole of the system")
        total = 0j
        for k, q in enumerate(self.poly):
            total = total + z ** k * q(x)
        for pole in self.poles:
            for k, q in enumerate(pole.terms, start=1):
                total = total + (z - pole.c) ** (-k) * q(x)
        return -np.asarray(total, dtype=np.complex128)


class ResolventCache:
    """Powers A^k and (A − cI)^{-k}, built once per (pole, power)."""

    def __init__(self, A: ArrayLike, max_cond: float = SINGULARITY_THRESHOLD):
        self.A = as_complex_matrix(A, "A")
        self.max_cond = max_cond
        self._resolvents: Dict[Tuple[float, int], ComplexMatrix] = {}
        self._powers: Dict[int, ComplexMatrix] = {0: np.eye(self.A.shape[0], dtype=np.complex128)}

    def resolvent(self, c: float, power: int = 1) -> ComplexMatrix:
        key = (float(c), power)
        if key not in self._resolvents:
            if power == 1:
                try:
                    self._resolvents[key] = inverse(self.A - c * np.eye(self.A.shape[0]), self.max_cond)
                except SingularityError as e:
                    raise SpectrumClashError("pole lies on the spectrum of A", c) from e
                logger.debug(f"built resolvent at c={c}")
            else:
                self._resolvents[key] = self.resolvent(c, power - 1) @ self.resolvent(c, 1)
        return self._resolvents[key]

    def power(self, k: int) -> ComplexMatrix:
        if k not in self._powers:
            self._powers[k] = self.power(k - 1) @ self.A
        return self._powers[k]


@dataclass
class GeneralGBDTData:
    A1: ComplexMatrix
    A2: ComplexMatrix
    Pi1_0: ComplexMatrix
    Pi2_0: ComplexMatrix
    S0: ComplexMatrix

    def __post_init__(self) -> None:
        self.A1 = as_complex_matrix(self.A1, "A1")
        self.A2 = as_complex_matrix(self.A2, "A2")
        self.Pi1_0 = as_complex_matrix(self.Pi1_0, "Pi1_0")
        self.Pi2_0 = as_complex_matrix(self.Pi2_0, "Pi2_0")
        self.S0 = as_complex_matrix(self.S0, "S0")
        n = self.A1.shape[0]
        for name, M in (("A1", self.A1), ("A2", self.A2), ("S0", self.S0)):
            if M.shape != (n, n):
                raise DimensionError(f"{name} must be {n}×{n}, got {M.shape}")
        if self.Pi1_0.shape != self.Pi2_0.shape or self.Pi1_0.shape[0] != n:
            raise DimensionError(f"Pi1_0 and Pi2_0 must both be {n}×m")

    @property
    def n(self) -> int:
        return self.A1.shape[0]

    @property
    def m(self) -> int:
        return self.Pi1_0.shape[1]

    def identity_residual(self, S: Optional[np.ndarray] = None, Pi1: Optional[np.ndarray] = None,
                          Pi2: Optional[np.ndarray] = None) -> float:
        """‖A1 S − S A2 − Π1 Π2*‖ (defaults to the data at x = 0)."""
        S = self.S0 if S is None else S
        Pi1 = self.Pi1_0 if Pi1 is None else Pi1
        Pi2 = self.Pi2_0 if Pi2 is None else Pi2
        return frobenius(self.A1 @ S - S @ self.A2 - Pi1 @ Pi2.conj().T)


@dataclass
class SymmetricHamiltonianSystem:
    """Generalised Hamiltonian system with H_k = β_k* β_k and its symmetric S-node."""
    sig: Signature
    betas: List[CoefficientProvider]
    poles: Tuple[float, ...]
    triple: SNodeTriple
    resolvents: ResolventCache = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.poles = tuple(float(c) for c in self.poles)
        if self.poles != self.triple.poles:
            raise DimensionError(f"system poles {self.poles} differ from triple poles {self.triple.poles}")
        if len(self.betas) != len(self.poles):
            raise DimensionError(f"{len(self.betas)} beta providers for {len(self.poles)} poles")
        if self.sig != self.triple.sig:
            raise DimensionError("system and triple signatures differ")
        require_pole_clearance(self.triple.A, self.poles)
        self.resolvents = ResolventCache(self.triple.A)

    @property
    def A(self) -> ComplexMatrix:
        return self.triple.A

    @property
    def r(self) -> int:
        return len(self.poles)

    @property
    def betas_constant(self) -> bool:
        return all(beta.is_constant for beta in self.betas)

    def breakpoints(self) -> List[float]:
        return sorted({b for beta in self.betas for b in beta.breaks})

    def hamiltonian(self, k: int, x: float) -> ComplexMatrix:
        beta = self.betas[k](x)
        if beta.ndim != 2 or beta.shape[1] != self.sig.m:
            raise DimensionError(f"β_{k + 1}(x) must have {self.sig.m} columns, got shape {beta.shape}")
        return beta.conj().T @ beta

    def hamiltonians(self, x: float) -> List[ComplexMatrix]:
        return [self.hamiltonian(k, x) for k in range(self.r)]

    def G(self, x: float, z: complex) -> ComplexMatrix:
        """i j Σ_k (z − c_k)^{-1} H_k(x)."""
        if z in self.poles:
            raise PoleError(f"z = {z} is a pole of the system")
        total = sum((H / (z - c) for H, c in zip(self.hamiltonians(x), self.poles)),
                    np.zeros((self.sig.m, self.sig.m), dtype=np.complex128))
        return 1j * self.sig.matrix @ total

    def as_rational_coeffs(self) -> RationalSystemCoeffs:
        """q_{k,1} = −i j H_k: every pole simple, no polynomial part."""
        j = self.sig.matrix

        def pole_coefficient(k: int) -> CoefficientProvider:
            return CoefficientProvider(lambda x: -1j * j @ self.hamiltonian(k, x), breaks=self.betas[k].breaks)

        return RationalSystemCoeffs(poly=[], poles=[PoleTerm(c, [pole_coefficient(k)]) for k, c in enumerate(self.poles)])

    def general_data(self) -> GeneralGBDTData:
        """A2 = A*, Π2(0) = −iΠ(0)j, so that Π2(0)* = i j Π(0)*."""
        t = self.triple
        return GeneralGBDTData(A1=t.A, A2=t.A.conj().T, Pi1_0=t.Pi0, Pi2_0=-1j * t.Pi0 @ self.sig.matrix, S0=t.S0)

    @classmethod
    def from_triple(cls, triple: SNodeTriple, betas: Sequence[CoefficientProvider]) -> "SymmetricHamiltonianSystem":
        return cls(sig=triple.sig, betas=list(betas), poles=triple.poles, triple=triple)


@dataclass
class GBDTTrajectory:
    """Sampled Π(x), S(x) (and Π2(x) for the general engine) with S-conditioning."""
    xs: np.ndarray
    Pis: np.ndarray
    Ss: np.ndarray
    cond_S: np.ndarray
    step: float
    truncated: bool = False
    Pi2s: Optional[np.ndarray] = None
    _s_inv: Dict[int, ComplexMatrix] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.xs)

    def index_of(self, x: float) -> int:
        return int(np.argmin(np.abs(self.xs - x)))

    def S_inv(self, i: int) -> ComplexMatrix:
        if i not in self._s_inv:
            self._s_inv[i] = inverse(self.Ss[i])
        return self._s_inv[i]

    def pi_trajectory(self) -> Trajectory:
        return Trajectory(self.xs, self.Pis, self.step)


@dataclass
class TransformedCoeffs:
    poly: List[ComplexMatrix]
    poles: List[Tuple[float, List[ComplexMatrix]]]
    inverse_residual: float

    def G(self, z: complex) -> ComplexMatrix:
        total = 0j
        for k, q in enumerate(self.poly):
            total = total + z ** k * q
        for c, terms in self.poles:
            if z == c:
                raise PoleError(f"z = {z} is a pole of the transformed system")
            for k, q in enumerate(terms, start=1):
                total = total + (z - c) ** (-k) * q
        return -np.asarray(total, dtype=np.complex128)


@dataclass
class TransformedHamiltonian:
    beta: ComplexMatrix
    H: ComplexMatrix


class _StatePacker:
    """Flattens several matrices into one RK4 state vector."""

    def __init__(self, *shapes: Tuple[int, int]):
        self.shapes = shapes
        self.offsets = np.cumsum([0] + [a * b for a, b in shapes])

    def pack(self, *arrays: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(a, dtype=np.complex128).ravel() for a in arrays])

    def unpack(self, state: np.ndarray) -> List[np.ndarray]:
        return [state[self.offsets[i]:self.offsets[i + 1]].reshape(shape) for i, shape in enumerate(self.shapes)]


# ---------------------------------------------------------------------------
# Transfer functions
# ---------------------------------------------------------------------------

def _resolvent_apply(A: np.ndarray, z: complex, B: np.ndarray) -> np.ndarray:
    try:
        return solve_linear(A - z * np.eye(A.shape[0]), B)
    except SingularityError as e:
        raise SpectrumClashError("z lies on the spectrum of A", z) from e


def transfer_function(A: ArrayLike, S: ArrayLike, Pi1: ArrayLike, Pi2: ArrayLike, z: complex) -> ComplexMatrix:
    """w_A(z) = I − Π2* S⁻¹ (A − zI)⁻¹ Π1."""
    A, S, Pi1, Pi2 = (np.asarray(M, dtype=np.complex128) for M in (A, S, Pi1, Pi2))
    m = Pi1.shape[1]
    return np.eye(m, dtype=np.complex128) - Pi2.conj().T @ solve_linear(S, _resolvent_apply(A, z, Pi1))


def symmetric_transfer_function(A: ArrayLike, S: ArrayLike, Pi: ArrayLike, sig: Signature,
                                z: complex) -> ComplexMatrix:
    """w_A(z) = I − i j Π* S⁻¹ (A − zI)⁻¹ Π."""
    A, S, Pi = (np.asarray(M, dtype=np.complex128) for M in (A, S, Pi))
    return np.eye(sig.m, dtype=np.complex128) - 1j * sig.matrix @ Pi.conj().T @ solve_linear(
        S, _resolvent_apply(A, z, Pi)
    )


def general_transfer_function(data: GeneralGBDTData, traj: GBDTTrajectory, i: int, z: complex) -> ComplexMatrix:
    if traj.Pi2s is None:
        raise GridError("trajectory has no Π2 samples")
    return transfer_function(data.A1, traj.Ss[i], traj.Pis[i], traj.Pi2s[i], z)


def j_unitarity_check(w: ArrayLike, sig: Signature) -> float:
    """‖w j w* j − I‖."""
    w = np.asarray(w, dtype=np.complex128)
    if w.shape != (sig.m, sig.m):
        raise DimensionError(f"w must be {sig.m}×{sig.m}, got {w.shape}")
    j = sig.matrix
    return frobenius(w @ j @ w.conj().T @ j - np.eye(sig.m))


# ---------------------------------------------------------------------------
# General engine
# ---------------------------------------------------------------------------

def _pi1_field(coeffs: RationalSystemCoeffs, cache1: ResolventCache):
    def field_(x: float, Pi1: np.ndarray) -> np.ndarray:
        out = np.zeros_like(Pi1)
        for k, q in enumerate(coeffs.poly):
            out += cache1.power(k) @ Pi1 @ q(x)
        for pole in coeffs.poles:
            for k, q in enumerate(pole.terms, start=1):
                out += cache1.resolvent(pole.c, k) @ Pi1 @ q(x)
        return out

    return field_


def _pi2_adjoint_field(coeffs: RationalSystemCoeffs, cache2: ResolventCache):
    """Field of P = Π2*: P' = −Σ q_k P A2^k − Σ q_sk P (A2 − c_s)^{-k}."""
    def field_(x: float, P: np.ndarray) -> np.ndarray:
        out = np.zeros_like(P)
        for k, q in enumerate(coeffs.poly):
            out -= q(x) @ P @ cache2.power(k)
        for pole in coeffs.poles:
            for k, q in enumerate(pole.terms, start=1):
                out -= q(x) @ P @ cache2.resolvent(pole.c, k)
        return out

    return field_


def _general_s_rate(coeffs: RationalSystemCoeffs, cache1: ResolventCache, cache2: ResolventCache):
    """S' = Σ_k Σ_{i=1}^{k} A1^{i−1} Π1 q_k Π2* A2^{k−i}
          − Σ_s Σ_k Σ_{i=1}^{k} (A1 − c_s)^{-i} Π1 q_sk Π2* (A2 − c_s)^{i−k−1}."""
    def rate(x: float, Pi1: np.ndarray, P: np.ndarray) -> np.ndarray:
        n = Pi1.shape[0]
        out = np.zeros((n, n), dtype=np.complex128)
        for k, q in enumerate(coeffs.poly):
            core = Pi1 @ q(x) @ P
            for i in range(1, k + 1):
                out += cache1.power(i - 1) @ core @ cache2.power(k - i)
        for pole in coeffs.poles:
            for k, q in enumerate(pole.terms, start=1):
                core = Pi1 @ q(x) @ P
                for i in range(1, k + 1):
                    out -= cache1.resolvent(pole.c, i) @ core @ cache2.resolvent(pole.c, k + 1 - i)
        return out

    return rate


def _general_caches(data: GeneralGBDTData, coeffs: RationalSystemCoeffs) -> Tuple[ResolventCache, ResolventCache]:
    centers = [p.c for p in coeffs.poles]
    require_pole_clearance(data.A1, centers)
    require_pole_clearance(data.A2, centers)
    return ResolventCache(data.A1), ResolventCache(data.A2)


def general_pi_odes(data: GeneralGBDTData, coeffs: RationalSystemCoeffs, span: Sequence[float],
                    step: float = DEFAULT_STEP) -> Tuple[Trajectory, Trajectory]:
    """RK4 trajectories of Π1(x) and Π2(x)."""
    cache1, cache2 = _general_caches(data, coeffs)
    pi1 = rk4_integrate(_pi1_field(coeffs, cache1), data.Pi1_0, span, step)
    adjoint = rk4_integrate(_pi2_adjoint_field(coeffs, cache2), data.Pi2_0.conj().T, span, step)
    return pi1, adjoint.map(lambda P: P.conj().T)


def _hermite_simpson(xs: np.ndarray, S0: np.ndarray, rate: Callable[..., np.ndarray],
                     trajectories: Sequence[np.ndarray], fields: Sequence[Callable]) -> np.ndarray:
    """Integrate S' = rate(x, *Y(x)) on the grid of the Y samples.

    Simpson weights; the midpoint values of each Y come from cubic Hermite
    interpolation with derivatives taken from its field. End values are
    evaluated just inside each step, as in rk4_step.
    """
    S = np.array(S0, dtype=np.complex128)
    out = [S]
    for i in range(len(xs) - 1):
        h = xs[i + 1] - xs[i]
        start, end = step_ends(xs[i], h)
        lefts = [samples[i] for samples in trajectories]
        rights = [samples[i + 1] for samples in trajectories]
        mids = [
            (Yl + Yr) / 2 + h * (f(start, Yl) - f(end, Yr)) / 8
            for Yl, Yr, f in zip(lefts, rights, fields)
        ]
        S = S + (h / 6) * (rate(start, *lefts) + 4 * rate(xs[i] + h / 2, *mids) + rate(end, *rights))
        if not np.all(np.isfinite(S)):
            raise SingularityError("S(x) became non-finite", x=float(xs[i + 1]))
        out.append(S)
    return np.array(out)


def general_s_ode(data: GeneralGBDTData, coeffs: RationalSystemCoeffs, pi1: Trajectory, pi2: Trajectory) -> Trajectory:
    if not pi1.same_grid(pi2):
        raise GridError("Π1 and Π2 trajectories are not on a common grid")
    cache1, cache2 = _general_caches(data, coeffs)
    adjoints = np.array([P.conj().T for P in pi2.samples])
    Ss = _hermite_simpson(
        pi1.xs,
        data.S0,
        _general_s_rate(coeffs, cache1, cache2),
        [pi1.samples, adjoints],
        [_pi1_field(coeffs, cache1), _pi2_adjoint_field(coeffs, cache2)],
    )
    return Trajectory(pi1.xs.copy(), Ss, pi1.step)


def _package(xs: np.ndarray, Pis: np.ndarray, Ss: np.ndarray, step: float, max_cond: float,
             Pi2s: Optional[np.ndarray] = None) -> GBDTTrajectory:
    conds = np.array([cond_estimate(S) for S in Ss])
    bad = np.nonzero(~(conds <= max_cond))[0]
    truncated = False
    if len(bad):
        cut = int(bad[0])
        if cut == 0:
            raise SingularityError("S is singular at the start of the span", cond=float(conds[0]), x=float(xs[0]))
        logger.warning(f"S(x) loses invertibility at x={xs[cut]:.6g}; trajectory truncated to {cut} samples")
        xs, Pis, Ss, conds = xs[:cut], Pis[:cut], Ss[:cut], conds[:cut]
        Pi2s = None if Pi2s is None else Pi2s[:cut]
        truncated = True
    return GBDTTrajectory(xs=xs, Pis=Pis, Ss=Ss, cond_S=conds, step=step, truncated=truncated, Pi2s=Pi2s)


def general_trajectory(data: GeneralGBDTData, coeffs: RationalSystemCoeffs, span: Sequence[float],
                       step: float = DEFAULT_STEP, max_cond: float = SINGULARITY_THRESHOLD) -> GBDTTrajectory:
    pi1, pi2 = general_pi_odes(data, coeffs, span, step)
    S = general_s_ode(data, coeffs, pi1, pi2)
    return _package(pi1.xs, pi1.samples, S.samples, step, max_cond, Pi2s=pi2.samples)


def _conjugated_coefficients(W: Sequence[np.ndarray], q: Sequence[np.ndarray], V: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Coefficients of w_A · (Σ_l t^l q_l) · w_A⁻¹ for local expansions w_A = Σ t^a W_a, w_A⁻¹ = Σ t^b V_b.

    Entry k collects Σ_{l ≥ k} Σ_{a+b = l−k} W_a q_l V_b; the same shape
    serves the polynomial part (t = 1/z) and every pole (t = z − c).
    """
    out = []
    for k in range(len(q)):
        total = np.zeros_like(q[k])
        for l in range(k, len(q)):
            for a in range(l - k + 1):
                total = total + W[a] @ q[l] @ V[l - k - a]
        out.append(total)
    return out


def transformed_coeffs(data: GeneralGBDTData, coeffs: RationalSystemCoeffs, x: float, Pi1: np.ndarray,
                       Pi2: np.ndarray, S: np.ndarray, caches: Optional[Tuple[ResolventCache, ResolventCache]] = None,
                       max_cond: float = SINGULARITY_THRESHOLD) -> TransformedCoeffs:
    """q̃_k and q̃_sk of the transformed system at x."""
    cache1, cache2 = caches or _general_caches(data, coeffs)
    try:
        S_inv = inverse(S, max_cond)
    except SingularityError as e:
        raise SingularityError("S(x) is not invertible", cond=e.cond, x=x) from e
    m = Pi1.shape[1]
    eye = np.eye(m, dtype=np.complex128)
    P = Pi2.conj().T
    left = P @ S_inv
    right = S_inv @ Pi1

    # t = 1/z: w_A = I + Σ z^{-a-1} X_a, w_A⁻¹ = I − Σ z^{-b-1} Y_b
    r = len(coeffs.poly)
    W = [eye] + [left @ cache1.power(a) @ Pi1 for a in range(max(r - 1, 0))]
    V = [eye] + [-(P @ cache2.power(b) @ right) for b in range(max(r - 1, 0))]
    poly = _conjugated_coefficients(W, [q(x) for q in coeffs.poly], V)

    poles = []
    worst = 0.0
    for pole in coeffs.poles:
        # t = z − c: W_0 = I − X_{−1}, W_a = −X_{−a−1}; V_0 = I + Y_{−1}, V_b = Y_{−b−1}
        X = [left @ cache1.resolvent(pole.c, a + 1) @ Pi1 for a in range(pole.multiplicity)]
        Y = [P @ cache2.resolvent(pole.c, b + 1) @ right for b in range(pole.multiplicity)]
        W = [eye - X[0]] + [-Xa for Xa in X[1:]]
        V = [eye + Y[0]] + Y[1:]
        worst = max(worst, frobenius(W[0] @ V[0] - eye))
        poles.append((pole.c, _conjugated_coefficients(W, [q(x) for q in pole.terms], V)))

    if worst > INVERSE_CHECK_TOLERANCE:
        logger.warning(f"(I − X)(I + Y) deviates from I by {worst:.2e} at x={x:.6g}")
    return TransformedCoeffs(poly=poly, poles=poles, inverse_residual=worst)


def _sample_indices(n: int, points: Optional[int]) -> List[int]:
    if points is None or points >= n:
        return list(range(n))
    return sorted({int(i) for i in np.linspace(0, n - 1, points).round()})


def _near_break(x: float, breaks: Sequence[float], h: float) -> bool:
    return any(abs(x - b) <= 2 * h for b in breaks)


def general_darboux_residual(data: GeneralGBDTData, coeffs: RationalSystemCoeffs, traj: GBDTTrajectory, z: complex,
                             fd_step: float = FD_STEP, points: Optional[int] = None) -> float:
    """max ‖w_A' − (G̃ w_A − w_A G)‖ for the general engine."""
    if traj.Pi2s is None:
        raise GridError("general Darboux check needs Π2 samples")
    caches = _general_caches(data, coeffs)
    n, m = data.n, data.m
    packer = _StatePacker((n, m), (m, n), (n, n))
    pi1_f = _pi1_field(coeffs, caches[0])
    adj_f = _pi2_adjoint_field(coeffs, caches[1])
    s_rate = _general_s_rate(coeffs, *caches)

    def joint(x: float, state: np.ndarray) -> np.ndarray:
        Pi1, P, _ = packer.unpack(state)
        return packer.pack(pi1_f(x, Pi1), adj_f(x, P), s_rate(x, Pi1, P))

    def w_of(state: np.ndarray) -> np.ndarray:
        Pi1, P, S = packer.unpack(state)
        return transfer_function(data.A1, S, Pi1, P.conj().T, z)

    breaks = coeffs.breakpoints()
    worst = 0.0
    for i in _sample_indices(len(traj), points):
        x = float(traj.xs[i])
        if _near_break(x, breaks, fd_step):
            continue
        state = packer.pack(traj.Pis[i], traj.Pi2s[i].conj().T, traj.Ss[i])
        w_plus = w_of(rk4_step(joint, x, state, fd_step))
        w_minus = w_of(rk4_step(joint, x, state, -fd_step))
        w = w_of(state)
        G_tilde = transformed_coeffs(data, coeffs, x, traj.Pis[i], traj.Pi2s[i], traj.Ss[i], caches).G(z)
        derivative = (w_plus - w_minus) / (2 * fd_step)
        worst = max(worst, frobenius(derivative - (G_tilde @ w - w @ coeffs.G(x, z))))
    return worst


# ---------------------------------------------------------------------------
# Symmetric engine
# ---------------------------------------------------------------------------

def _symmetric_pi_field(sys: SymmetricHamiltonianSystem):
    j = sys.sig.matrix

    def field_(x: float, Pi: np.ndarray) -> np.ndarray:
        out = np.zeros_like(Pi)
        for k, c in enumerate(sys.poles):
            out += sys.resolvents.resolvent(c) @ Pi @ j @ sys.hamiltonian(k, x)
        return -1j * out

    return field_


def _symmetric_s_rate(sys: SymmetricHamiltonianSystem):
    j = sys.sig.matrix

    def rate(x: float, Pi: np.ndarray) -> np.ndarray:
        out = np.zeros((sys.triple.n, sys.triple.n), dtype=np.complex128)
        for k, c in enumerate(sys.poles):
            R = sys.resolvents.resolvent(c)
            factor = R @ Pi @ j @ sys.betas[k](x).conj().T
            out -= factor @ factor.conj().T
        return out

    return rate


def symmetric_pi_ode(sys: SymmetricHamiltonianSystem, span: Sequence[float], step: float = DEFAULT_STEP) -> Trajectory:
    """Π' = −i Σ_k (A − c_k I)⁻¹ Π j H_k(x)."""
    return rk4_integrate(_symmetric_pi_field(sys), sys.triple.Pi0, span, step)


def symmetric_s_ode(sys: SymmetricHamiltonianSystem, pi: Trajectory) -> Trajectory:
    """S' = −Σ_k (A − c_k I)⁻¹ Π j H_k j Π* (A* − c_k I)⁻¹, integrated along the Π samples."""
    Ss = _hermite_simpson(pi.xs, sys.triple.S0, _symmetric_s_rate(sys), [pi.samples], [_symmetric_pi_field(sys)])
    return Trajectory(pi.xs.copy(), Ss, pi.step)


def s_rate_max_eigenvalue(sys: SymmetricHamiltonianSystem, pi: Trajectory) -> float:
    """Largest eigenvalue of S'(x) over the samples; S' ≤ 0 makes it non-positive."""
    rate = _symmetric_s_rate(sys)
    worst = -math.inf
    for x, Pi in zip(pi.xs, pi.samples):
        R = rate(x, Pi)
        worst = max(worst, float(np.linalg.eigvalsh((R + R.conj().T) / 2).max()))
    return worst


def symmetric_trajectory(sys: SymmetricHamiltonianSystem, span: Sequence[float], step: float = DEFAULT_STEP,
                         max_cond: float = SINGULARITY_THRESHOLD) -> GBDTTrajectory:
    pi = symmetric_pi_ode(sys, span, step)
    S = symmetric_s_ode(sys, pi)
    return _package(pi.xs, pi.samples, S.samples, step, max_cond)


def transformed_hamiltonians(sys: SymmetricHamiltonianSystem, Pi: np.ndarray, S: np.ndarray,
                             x: float) -> List[TransformedHamiltonian]:
    """β̃_k = β_k j w_A(x, c_k)* j and H̃_k = β̃_k* β̃_k."""
    j = sys.sig.matrix
    out = []
    for k, c in enumerate(sys.poles):
        w = symmetric_transfer_function(sys.A, S, Pi, sys.sig, c)
        beta = sys.betas[k](x) @ j @ w.conj().T @ j
        out.append(TransformedHamiltonian(beta=beta, H=beta.conj().T @ beta))
    return out


def transformed_G(sys: SymmetricHamiltonianSystem, transformed: Sequence[TransformedHamiltonian],
                  z: complex) -> ComplexMatrix:
    """i j Σ_k (z − c_k)^{-1} H̃_k."""
    if z in sys.poles:
        raise PoleError(f"z = {z} is a pole of the system")
    total = sum((t.H / (z - c) for t, c in zip(transformed, sys.poles)),
                np.zeros((sys.sig.m, sys.sig.m), dtype=np.complex128))
    return 1j * sys.sig.matrix @ total


def similarity_residual(sys: SymmetricHamiltonianSystem, Pi: np.ndarray, S: np.ndarray, x: float) -> float:
    """max_k ‖j H̃_k − w_A(c_k) j H_k w_A(c_k)⁻¹‖."""
    j = sys.sig.matrix
    worst = 0.0
    for k, (c, t) in enumerate(zip(sys.poles, transformed_hamiltonians(sys, Pi, S, x))):
        w = symmetric_transfer_function(sys.A, S, Pi, sys.sig, c)
        worst = max(worst, frobenius(j @ t.H - w @ j @ sys.hamiltonian(k, x) @ inverse(w)))
    return worst


def pole_j_unitarity(sys: SymmetricHamiltonianSystem, traj: GBDTTrajectory) -> float:
    """max over samples and poles of ‖w_A(x, c_k) j w_A(x, c_k)* j − I‖."""
    return max(
        j_unitarity_check(symmetric_transfer_function(sys.A, S, Pi, sys.sig, c), sys.sig)
        for Pi, S in zip(traj.Pis, traj.Ss)
        for c in sys.poles
    )


def j_unitarity_profile(sys: SymmetricHamiltonianSystem, traj: GBDTTrajectory, zs: Sequence[float],
                        points: Optional[int] = 50) -> Dict[float, float]:
    """Empirical max_x ‖w_A(x, z)* j w_A(x, z) − j‖ for real z off the poles."""
    j = sys.sig.matrix
    profile = {}
    for z in zs:
        worst = 0.0
        for i in _sample_indices(len(traj), points):
            w = symmetric_transfer_function(sys.A, traj.Ss[i], traj.Pis[i], sys.sig, z)
            worst = max(worst, frobenius(w.conj().T @ j @ w - j))
        profile[float(z)] = worst
    return profile


def determinant_floor(sys: SymmetricHamiltonianSystem, traj: GBDTTrajectory, z: complex) -> float:
    """min over samples of |det w_A(x, z)|."""
    return float(min(
        abs(np.linalg.det(symmetric_transfer_function(sys.A, S, Pi, sys.sig, z)))
        for Pi, S in zip(traj.Pis, traj.Ss)
    ))


def fundamental_solution_initial(sys: SymmetricHamiltonianSystem, z: complex, span: Sequence[float],
                                 step: float = DEFAULT_STEP) -> Trajectory:
    """w(x, z) with w' = G(x, z) w and w(x0, z) = I."""
    if z in sys.poles:
        raise PoleError(f"z = {z} is a pole of the system")
    eye = np.eye(sys.sig.m, dtype=np.complex128)
    if sys.betas_constant:
        xs = make_grid(span, step)
        G = sys.G(xs[0], z)
        return Trajectory(xs, np.array([mat_exp((x - xs[0]) * G) for x in xs]), float(step))
    return rk4_integrate(lambda x, w: sys.G(x, z) @ w, eye, span, step)


def _symmetric_joint(sys: SymmetricHamiltonianSystem) -> Tuple[_StatePacker, Callable]:
    n, m = sys.triple.n, sys.sig.m
    packer = _StatePacker((n, m), (n, n))
    pi_f = _symmetric_pi_field(sys)
    s_rate = _symmetric_s_rate(sys)

    def joint(x: float, state: np.ndarray) -> np.ndarray:
        Pi, _ = packer.unpack(state)
        return packer.pack(pi_f(x, Pi), s_rate(x, Pi))

    return packer, joint


def darboux_residual(sys: SymmetricHamiltonianSystem, traj: GBDTTrajectory, z: complex,
                     fd_step: float = FD_STEP, points: Optional[int] = None) -> float:
    """max over samples of ‖w_A'(x, z) − (G̃ w_A − w_A G)(x, z)‖, w_A' by central differences."""
    if z in sys.poles:
        raise PoleError(f"z = {z} is a pole of the system")
    packer, joint = _symmetric_joint(sys)

    def w_of(state: np.ndarray) -> np.ndarray:
        Pi, S = packer.unpack(state)
        return symmetric_transfer_function(sys.A, S, Pi, sys.sig, z)

    breaks = sys.breakpoints()
    worst = 0.0
    for i in _sample_indices(len(traj), points):
        x = float(traj.xs[i])
        if _near_break(x, breaks, fd_step):
            continue
        state = packer.pack(traj.Pis[i], traj.Ss[i])
        derivative = (w_of(rk4_step(joint, x, state, fd_step)) - w_of(rk4_step(joint, x, state, -fd_step))) / (2 * fd_step)
        w = w_of(state)
        G_tilde = transformed_G(sys, transformed_hamiltonians(sys, traj.Pis[i], traj.Ss[i], x), z)
        worst = max(worst, frobenius(derivative - (G_tilde @ w - w @ sys.G(x, z))))
    return worst


def transformed_solution_gap(sys: SymmetricHamiltonianSystem, z: complex, span: Sequence[float],
                             step: float = DEFAULT_STEP) -> float:
    """max_x ‖w̃(x, z) − w_A(x, z) w(x, z)‖ with w̃ integrated directly from w̃(x0) = w_A(x0, z)."""
    n, m = sys.triple.n, sys.sig.m
    packer = _StatePacker((n, m), (n, n), (m, m))
    pi_f = _symmetric_pi_field(sys)
    s_rate = _symmetric_s_rate(sys)

    def joint(x: float, state: np.ndarray) -> np.ndarray:
        Pi, S, W = packer.unpack(state)
        G_tilde = transformed_G(sys, transformed_hamiltonians(sys, Pi, S, x), z)
        return packer.pack(pi_f(x, Pi), s_rate(x, Pi), G_tilde @ W)

    t = sys.triple
    start = packer.pack(t.Pi0, t.S0, symmetric_transfer_function(t.A, t.S0, t.Pi0, sys.sig, z))
    direct = rk4_integrate(joint, start, span, step)
    w = fundamental_solution_initial(sys, z, span, step)
    if not direct.same_grid(w):
        raise GridError("transformed and initial solutions are on different grids")

    worst = 0.0
    for state, w_x in zip(direct.samples, w.samples):
        Pi, S, W = packer.unpack(state)
        worst = max(worst, frobenius(W - symmetric_transfer_function(t.A, S, Pi, sys.sig, z) @ w_x))
    return worst


def reduction_consistency(sys: SymmetricHamiltonianSystem, span: Sequence[float], step: float = DEFAULT_STEP,
                          points: Optional[int] = 20) -> Dict[str, float]:
    """Run the general engine on the symmetric data and compare against the symmetric engine."""
    data = sys.general_data()
    coeffs = sys.as_rational_coeffs()
    general = general_trajectory(data, coeffs, span, step)
    symmetric = symmetric_trajectory(sys, span, step)
    n = min(len(general), len(symmetric))
    j = sys.sig.matrix
    caches = _general_caches(data, coeffs)

    residuals = {"pi": 0.0, "pi2": 0.0, "s": 0.0, "coefficients": 0.0}
    for i in range(n):
        residuals["pi"] = max(residuals["pi"], frobenius(general.Pis[i] - symmetric.Pis[i]))
        residuals["pi2"] = max(residuals["pi2"], frobenius(general.Pi2s[i].conj().T - 1j * j @ symmetric.Pis[i].conj().T))
        residuals["s"] = max(residuals["s"], frobenius(general.Ss[i] - symmetric.Ss[i]))
    for i in _sample_indices(n, points):
        x = float(general.xs[i])
        q_tilde = transformed_coeffs(data, coeffs, x, general.Pis[i], general.Pi2s[i], general.Ss[i], caches)
        hamiltonians = transformed_hamiltonians(sys, symmetric.Pis[i], symmetric.Ss[i], x)
        for (_, terms), t in zip(q_tilde.poles, hamiltonians):
            residuals["coefficients"] = max(residuals["coefficients"], frobenius(terms[0] + 1j * j @ t.H))
    return residuals


# ---------------------------------------------------------------------------
# Closed-form solution families
# ---------------------------------------------------------------------------

@dataclass
class TrivialClosedForm:
    """Π(x) and S(x) for H_k ≡ I_m."""
    B: ComplexMatrix
    theta1: ComplexMatrix
    theta2: ComplexMatrix
    C1: ComplexMatrix
    C2: ComplexMatrix

    def pi(self, x: float) -> ComplexMatrix:
        return np.hstack([mat_exp(-1j * x * self.B) @ self.theta1, mat_exp(1j * x * self.B) @ self.theta2])

    def s(self, x: float) -> ComplexMatrix:
        minus, plus = mat_exp(-1j * x * self.B), mat_exp(1j * x * self.B)
        return minus @ self.C1 @ minus.conj().T - plus @ self.C2 @ plus.conj().T

    @property
    def S0(self) -> ComplexMatrix:
        return self.C1 - self.C2


def closed_form_trivial(triple: SNodeTriple) -> TrivialClosedForm:
    sig = triple.sig
    if sig.m1 == 0 or sig.m2 == 0:
        raise StructureError("closed form for trivial Hamiltonians needs m1 > 0 and m2 > 0")
    cache = ResolventCache(triple.A)
    B = sum((cache.resolvent(c) for c in triple.poles), np.zeros_like(triple.A))
    theta1, theta2 = triple.Pi0[:, : sig.m1], triple.Pi0[:, sig.m1:]
    C1 = solve_sylvester(triple.A, 1j * theta1 @ theta1.conj().T)
    C2 = solve_sylvester(triple.A, 1j * theta2 @ theta2.conj().T)
    gap = frobenius(C1 - C2 - triple.S0)
    if gap > 1e-8 * (1.0 + frobenius(triple.S0)):
        logger.warning(f"S(0) differs from C1 − C2 by {gap:.2e}")
    return TrivialClosedForm(B=B, theta1=theta1, theta2=theta2, C1=C1, C2=C2)


@dataclass
class ConstantBetaSolution:
    """Π(x) = [Φ1, Φ2]·[β2; β1] for constant β with β_k j β_k* = 0 and β1 j β2* = I."""
    A: ComplexMatrix
    Q: ComplexMatrix
    c1: float
    c2: float
    h1: ComplexMatrix
    h2: ComplexMatrix
    beta1: ComplexMatrix
    beta2: ComplexMatrix

    def _exponentials(self, x: float) -> Tuple[np.ndarray, np.ndarray]:
        return mat_exp(1j * x * self.Q) @ self.h1, mat_exp(-1j * x * self.Q) @ self.h2

    def phi(self, x: float) -> Tuple[ComplexMatrix, ComplexMatrix]:
        up, down = self._exponentials(x)
        shifted = (self.A - self.c2 * np.eye(self.A.shape[0])) @ self.Q
        return up + down, -shifted @ (up - down)

    def pi(self, x: float) -> ComplexMatrix:
        phi1, phi2 = self.phi(x)
        return phi1 @ self.beta2 + phi2 @ self.beta1

    def phi_residual(self, x: float) -> float:
        """max of ‖Φ1' + i(A − c2)⁻¹Φ2‖ and ‖Φ2' + i(A − c1)⁻¹Φ1‖ with analytic derivatives."""
        n = self.A.shape[0]
        up, down = self._exponentials(x)
        phi1, phi2 = self.phi(x)
        shifted = (self.A - self.c2 * np.eye(n)) @ self.Q
        d_phi1 = 1j * self.Q @ (up - down)
        d_phi2 = -1j * shifted @ self.Q @ (up + down)
        first = d_phi1 + 1j * solve_linear(self.A - self.c2 * np.eye(n), phi2)
        second = d_phi2 + 1j * solve_linear(self.A - self.c1 * np.eye(n), phi1)
        return max(frobenius(first), frobenius(second))


def closed_form_constant_beta(triple: SNodeTriple, beta1: ArrayLike, beta2: ArrayLike, c1: float, c2: float,
                              jf: JordanForm, tol: float = 1e-8) -> ConstantBetaSolution:
    sig = triple.sig
    beta1 = as_complex_matrix(beta1, "beta1")
    beta2 = as_complex_matrix(beta2, "beta2")
    p = sig.m1
    if sig.m2 != p or beta1.shape != (p, sig.m) or beta2.shape != (p, sig.m):
        raise DimensionError("constant-β closed form needs m1 = m2 = p and p×m matrices β1, β2")
    j = sig.matrix
    eye = np.eye(p)
    violation = max(
        frobenius(beta1 @ j @ beta1.conj().T),
        frobenius(beta2 @ j @ beta2.conj().T),
        frobenius(beta1 @ j @ beta2.conj().T - eye),
    )
    if violation > tol:
        raise StructureError(f"β pair violates β_k j β_k* = 0, β1 j β2* = I (residual {violation:.2e})")
    if frobenius(jf.assemble() - triple.A) > 1e-8 * max(1.0, frobenius(triple.A)):
        raise StructureError("Jordan data does not reproduce A")

    Q = matrix_root(jf, SpectralFunction.resolvent_product(c1, c2), BranchSpec.default(2, len(jf.cells)))
    n = triple.n
    s = triple.Pi0 @ j @ beta1.conj().T
    d = solve_linear((triple.A - c2 * np.eye(n)) @ Q, triple.Pi0 @ j @ beta2.conj().T)
    return ConstantBetaSolution(
        A=triple.A, Q=Q, c1=float(c1), c2=float(c2),
        h1=(s - d) / 2, h2=(s + d) / 2,
        beta1=beta1, beta2=beta2,
    )
