"""Dense complex linear algebra and integration kernels.

Every other module goes through these helpers for matrix exponentials,
linear solves, condition estimates and fixed-step RK4 integration.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, List, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionError, IntegrationError, SingularityError, StructureError
from .schemas import Tolerance

logger = logging.getLogger(__name__)

ComplexMatrix = NDArray[np.complex128]
Field = Callable[[float, np.ndarray], np.ndarray]

# S(x) and friends count as invertible below this condition number.
SINGULARITY_THRESHOLD = 1e12
DEFAULT_STEP = 1e-3

_SERIES_SCALE = 0.5
_SERIES_CUTOFF = 1e-18
_SERIES_MAX_TERMS = 64
_STAGE_NUDGE = 1e-9

__all__ = [
    "ComplexMatrix",
    "Tolerance",
    "Trajectory",
    "as_complex_matrix",
    "cond_estimate",
    "decode_complex",
    "decode_complex_matrix",
    "encode_complex_matrix",
    "frobenius",
    "inverse",
    "mat_exp",
    "rk4_integrate",
    "rk4_step",
    "step_ends",
    "solve_linear",
]


def as_complex_matrix(M: ArrayLike, name: str = "matrix") -> ComplexMatrix:
    """Coerce to a 2-D complex128 array, rejecting empty or non-finite input."""
    arr = np.asarray(M, dtype=np.complex128)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise StructureError(f"{name} has non-finite entries")
    return arr


def _require_square(M: np.ndarray, name: str = "matrix") -> int:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M.shape[0]


def mat_exp(M: ArrayLike) -> ComplexMatrix:
    """Matrix exponential by scaling and squaring with a truncated Taylor series."""
    M = as_complex_matrix(M, "exponent")
    n = _require_square(M, "exponent")

    norm = np.linalg.norm(M)
    squarings = 0
    if norm > _SERIES_SCALE:
        squarings = int(np.ceil(np.log2(norm / _SERIES_SCALE)))
    X = M / (2.0 ** squarings)

    result = np.eye(n, dtype=np.complex128)
    term = np.eye(n, dtype=np.complex128)
    for k in range(1, _SERIES_MAX_TERMS):
        term = term @ X / k
        result = result + term
        if np.linalg.norm(term) < _SERIES_CUTOFF:
            break

    for _ in range(squarings):
        result = result @ result
    return result


def cond_estimate(M: ArrayLike) -> float:
    """2-norm condition number; +inf when M is singular to working precision."""
    M = np.asarray(M, dtype=np.complex128)
    n = _require_square(M)
    singular_values = np.linalg.svd(M, compute_uv=False)
    largest, smallest = singular_values[0], singular_values[-1]
    if smallest <= n * np.finfo(float).eps * largest or largest == 0.0:
        return float("inf")
    return float(largest / smallest)


def solve_linear(A: ArrayLike, B: ArrayLike, max_cond: float = SINGULARITY_THRESHOLD) -> ComplexMatrix:
    """Solve AX = B, refusing matrices whose condition estimate exceeds max_cond."""
    A = np.asarray(A, dtype=np.complex128)
    B = np.asarray(B, dtype=np.complex128)
    n = _require_square(A, "coefficient matrix")
    if B.shape[0] != n:
        raise DimensionError(f"right-hand side has {B.shape[0]} rows, expected {n}")

    cond = cond_estimate(A)
    if cond > max_cond:
        raise SingularityError("linear system is singular to tolerance", cond=cond)
    try:
        return np.linalg.solve(A, B)
    except np.linalg.LinAlgError as e:
        raise SingularityError(f"linear solve failed: {e}", cond=cond) from e


def inverse(A: ArrayLike, max_cond: float = SINGULARITY_THRESHOLD) -> ComplexMatrix:
    A = np.asarray(A, dtype=np.complex128)
    return solve_linear(A, np.eye(A.shape[0], dtype=np.complex128), max_cond=max_cond)


@dataclass
class Trajectory:
    """Sampled solution of a matrix ODE on a fixed grid."""
    xs: NDArray[np.float64]
    samples: np.ndarray
    step: float

    def __len__(self) -> int:
        return len(self.xs)

    def __getitem__(self, index: int) -> np.ndarray:
        return self.samples[index]

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.xs[0]), float(self.xs[-1])

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]

    def index_of(self, x: float) -> int:
        """Index of the grid sample nearest to x."""
        return int(np.argmin(np.abs(self.xs - x)))

    def same_grid(self, other: "Trajectory", tol: float = 1e-12) -> bool:
        return len(self.xs) == len(other.xs) and bool(np.all(np.abs(self.xs - other.xs) <= tol))

    def map(self, func: Callable[[np.ndarray], np.ndarray]) -> "Trajectory":
        return Trajectory(self.xs.copy(), np.array([func(Y) for Y in self.samples]), self.step)


def make_grid(span: Sequence[float], step: float) -> NDArray[np.float64]:
    """Uniform grid from span[0] to span[1]; the final interval may be shorter."""
    if step <= 0:
        raise DimensionError(f"step must be positive, got {step}")
    x0, x1 = float(span[0]), float(span[1])
    length = abs(x1 - x0)
    if length == 0.0:
        return np.array([x0])
    direction = 1.0 if x1 > x0 else -1.0
    n_full = int(np.floor(length / step + 1e-9))
    xs = x0 + direction * step * np.arange(n_full + 1)
    if abs(xs[-1] - x1) > 1e-9 * step:
        xs = np.append(xs, x1)
    else:
        xs[-1] = x1
    return xs


def step_ends(x: float, h: float) -> Tuple[float, float]:
    """Abscissae just inside [x, x + h]; coefficients that switch at a grid point are read from this step's side."""
    d = h * _STAGE_NUDGE
    return x + d, x + h - d


def rk4_step(field: Field, x: float, Y: np.ndarray, h: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of size h (h may be negative)."""
    start, end = step_ends(x, h)
    k1 = field(start, Y)
    k2 = field(x + h / 2, Y + (h / 2) * k1)
    k3 = field(x + h / 2, Y + (h / 2) * k2)
    k4 = field(end, Y + h * k3)
    return Y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_integrate(field: Field, Y0: ArrayLike, span: Sequence[float], step: float = DEFAULT_STEP) -> Trajectory:
    """Fixed-step RK4 trajectory of Y' = field(x, Y) with samples at every grid point."""
    xs = make_grid(span, step)
    Y = np.array(Y0, dtype=np.complex128)
    samples: List[np.ndarray] = [Y]

    for i in range(len(xs) - 1):
        Y = rk4_step(field, xs[i], Y, xs[i + 1] - xs[i])
        if not np.all(np.isfinite(Y)):
            raise IntegrationError("non-finite field output", x=float(xs[i]))
        samples.append(Y)

    logger.debug(f"RK4 finished {len(xs) - 1} steps on [{xs[0]:.4g}, {xs[-1]:.4g}]")
    return Trajectory(xs=xs, samples=np.array(samples), step=float(step))


def frobenius(M: Union[np.ndarray, float]) -> float:
    return float(np.linalg.norm(M))


def encode_complex_matrix(M: np.ndarray) -> List[List[List[float]]]:
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(M, dtype=np.complex128)]


def decode_complex(value: Any) -> complex:
    """Read a JSON scalar: [re, im] pair or bare real number."""
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise DimensionError(f"complex entries must be [re, im] pairs, got {value}")
        return complex(float(value[0]), float(value[1]))
    return complex(float(value))


def decode_complex_matrix(data: Any, name: str = "matrix") -> ComplexMatrix:
    rows = [[decode_complex(v) for v in row] for row in data]
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise DimensionError(f"{name} has ragged rows")
    return as_complex_matrix(np.array(rows, dtype=np.complex128), name)
