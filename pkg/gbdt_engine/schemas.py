"""Pydantic models for configuration, scenario files and reports."""

from enum import Enum
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

# Complex numbers travel as [re, im]; a bare number is read as real.
ComplexEntry = Union[float, List[float]]
MatrixData = List[List[ComplexEntry]]


class Tolerance(BaseModel):
    """Numerical tolerances shared by all constructions."""
    structural: float = Field(default=1e-10, description="Tolerance for algebraic identities")
    ode: float = Field(default=1e-6, description="Tolerance for integrated quantities")

    @field_validator("structural", "ode")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("tolerance must be strictly positive")
        return v


class CheckThresholds(BaseModel):
    """Pass thresholds for the residual checks of a scenario run."""
    root: float = Field(default=1e-8, description="Relative ‖Q^ℓ − f(A)‖")
    commutation: float = Field(default=1e-8, description="Relative ‖AQ − QA‖ and family commutators")
    noncommuting: float = Field(default=0.2, description="Lower bound for roots expected not to commute")
    identity: float = Field(default=1e-8, description="S-node identity along trajectories")
    hermiticity: float = Field(default=1e-9, description="‖S − S*‖ along trajectories")
    monotonicity: float = Field(default=1e-10, description="Largest eigenvalue of S'(x)")
    closed_form: float = Field(default=1e-7, description="Closed form vs RK4")
    darboux: float = Field(default=1e-5, description="Finite-difference Darboux residual")
    solution_gap: float = Field(default=1e-6, description="w_A·w vs direct transformed solution")
    j_unitarity: float = Field(default=1e-8, description="‖w j w* j − I‖ at the poles")
    similarity: float = Field(default=1e-8, description="‖jH̃ − w jH w⁻¹‖")
    consistency: float = Field(default=1e-8, description="General vs symmetric engine")
    pde: float = Field(default=1e-4, description="Dynamical system residual")
    conservation: float = Field(default=1e-4, description="Conservation law residual")
    dirac: float = Field(default=1e-9, description="Discrete Dirac structure checks")


class Settings(BaseModel):
    """Main settings configuration."""
    tolerances: Tolerance = Field(default_factory=Tolerance, description="Numerical tolerances")
    step: float = Field(default=1e-3, description="Default RK4 step")
    fd_step: float = Field(default=1e-5, description="Central-difference step for Darboux checks")
    singularity_threshold: float = Field(default=1e12, description="Largest condition number treated as invertible")
    output_dir: str = Field(default="./gbdt_out", description="Directory for exported files")
    batch_workers: int = Field(default=4, description="Concurrent scenarios in batch mode")
    thresholds: CheckThresholds = Field(default_factory=CheckThresholds, description="Check pass thresholds")
    debug_mode: bool = Field(default=False, description="Debug mode flag")

    @field_validator("step", "fd_step", "singularity_threshold")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("Must be positive")
        return v

    @field_validator("batch_workers")
    @classmethod
    def validate_workers(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("Must be positive integer")
        return v


class ScenarioMode(str, Enum):
    """Pipelines a scenario can request."""
    ROOTS = "roots"
    GBDT_SYM = "gbdt-sym"
    GBDT_GENERAL = "gbdt-general"
    DYNAMICS = "dynamics"
    DIRAC = "dirac"


class JordanSpec(BaseModel):
    """Similarity u and Jordan cells [re(μ), im(μ), p]."""
    u: MatrixData
    cells: List[List[float]]

    @field_validator("cells")
    @classmethod
    def validate_cells(cls, v: List[List[float]]) -> List[List[float]]:
        for cell in v:
            if len(cell) != 3 or int(cell[2]) != cell[2] or cell[2] < 1:
                raise ValueError("each cell must be [re, im, size] with integer size ≥ 1")
        if not v:
            raise ValueError("at least one Jordan cell is required")
        return v


class TripleSpec(BaseModel):
    """Symmetric S-node {A, S(0), Π(0)} with signature and poles."""
    A: MatrixData
    S0: MatrixData
    Pi0: MatrixData
    m1: int = Field(ge=0)
    m2: int = Field(ge=0)
    poles: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_signature(self) -> "TripleSpec":
        if self.m1 + self.m2 <= 0:
            raise ValueError("m1 + m2 must be positive")
        if len(set(self.poles)) != len(self.poles):
            raise ValueError("poles must be distinct")
        return self


class ProviderSpec(BaseModel):
    """A coefficient x ↦ matrix: either constant or piecewise constant on breaks."""
    constant: Optional[MatrixData] = None
    breaks: Optional[List[float]] = None
    values: Optional[List[MatrixData]] = None

    @model_validator(mode="after")
    def validate_form(self) -> "ProviderSpec":
        if self.constant is not None:
            if self.breaks is not None or self.values is not None:
                raise ValueError("give either 'constant' or 'breaks'/'values', not both")
            return self
        if self.breaks is None or self.values is None:
            raise ValueError("piecewise provider needs 'breaks' and 'values'")
        if len(self.values) != len(self.breaks) + 1:
            raise ValueError("piecewise provider needs len(values) == len(breaks) + 1")
        if list(self.breaks) != sorted(self.breaks):
            raise ValueError("breaks must be increasing")
        return self


class FunctionSpec(BaseModel):
    """Built-in spectral function f(λ)."""
    kind: Literal["shift", "quadratic", "resolvent_product"]
    z: float = 0.0
    c: float = 0.0
    a: float = 0.0
    sign: Literal["+", "-"] = "+"
    c1: float = 0.0
    c2: float = 0.0


class CandidateRoot(BaseModel):
    """An externally supplied root to verify against f(A)."""
    name: str
    Q: MatrixData
    expect_commuting: bool = True


class RootsInput(BaseModel):
    jordan: JordanSpec
    function: FunctionSpec
    ell: int = Field(default=2, ge=2)
    branches: Optional[List[int]] = None
    candidates: List[CandidateRoot] = Field(default_factory=list)
    family_z: List[float] = Field(default_factory=list)


class SymmetricInput(BaseModel):
    triple: TripleSpec
    betas: List[ProviderSpec]
    closed_form: Optional[Literal["trivial", "constant_beta"]] = None
    jordan: Optional[JordanSpec] = None

    @model_validator(mode="after")
    def validate_inputs(self) -> "SymmetricInput":
        if len(self.betas) != len(self.triple.poles):
            raise ValueError("one beta provider is required per pole")
        if self.closed_form == "constant_beta" and self.jordan is None:
            raise ValueError("constant_beta closed form needs the Jordan form of A")
        return self


class PoleSpec(BaseModel):
    c: float
    terms: List[ProviderSpec] = Field(min_length=1)


class GeneralInput(BaseModel):
    A1: MatrixData
    A2: MatrixData
    Pi1_0: MatrixData
    Pi2_0: MatrixData
    S0: MatrixData
    poly: List[ProviderSpec] = Field(default_factory=list)
    poles: List[PoleSpec] = Field(default_factory=list)


class DiracInput(BaseModel):
    m1: int = Field(ge=1)
    m2: int = Field(ge=1)
    rhos: List[MatrixData]
    z: ComplexEntry
    y0: List[ComplexEntry]
    ells: List[int] = Field(default_factory=lambda: [2, 4])


class Scenario(BaseModel):
    """A verification scenario as read from JSON."""
    name: str
    mode: ScenarioMode
    span: List[float] = Field(default_factory=lambda: [0.0, 1.0])
    step: float = 1e-3
    z_samples: List[ComplexEntry] = Field(default_factory=list)
    zeta_samples: List[List[float]] = Field(default_factory=list)
    tolerances: Tolerance = Field(default_factory=Tolerance)
    thresholds: CheckThresholds = Field(default_factory=CheckThresholds)
    seed: int = 0

    roots: Optional[RootsInput] = None
    symmetric: Optional[SymmetricInput] = None
    general: Optional[GeneralInput] = None
    dirac: Optional[DiracInput] = None

    @field_validator("span")
    @classmethod
    def validate_span(cls, v: List[float]) -> List[float]:
        if len(v) != 2:
            raise ValueError("span must be [x0, x1]")
        if v[0] == v[1]:
            raise ValueError("span must be nonempty")
        return v

    @field_validator("step")
    @classmethod
    def validate_step(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("step must be positive")
        return v

    @model_validator(mode="after")
    def validate_mode_inputs(self) -> "Scenario":
        required = {
            ScenarioMode.ROOTS: "roots",
            ScenarioMode.GBDT_SYM: "symmetric",
            ScenarioMode.DYNAMICS: "symmetric",
            ScenarioMode.GBDT_GENERAL: "general",
            ScenarioMode.DIRAC: "dirac",
        }[self.mode]
        if getattr(self, required) is None:
            raise ValueError(f"mode '{self.mode.value}' requires the '{required}' input")
        if self.mode == ScenarioMode.DYNAMICS:
            r = len(self.symmetric.triple.poles)
            for zetas in self.zeta_samples:
                if len(zetas) != r:
                    raise ValueError(f"each zeta sample needs {r} entries")
        return self


class CheckEntry(BaseModel):
    """One residual check of a report."""
    check_id: str
    residual: float
    tolerance: float
    comparator: Literal["le", "gt"] = "le"
    informational: bool = False

    @property
    def passed(self) -> bool:
        if self.informational:
            return True
        if self.comparator == "gt":
            return self.residual > self.tolerance
        return self.residual <= self.tolerance


class Report(BaseModel):
    """Result of a scenario run."""
    scenario: str
    mode: ScenarioMode
    checks: List[CheckEntry] = Field(default_factory=list)
    artifacts: List[str] = Field(default_factory=list)
    errors: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors and all(check.passed for check in self.checks)

    def add(self, check_id: str, residual: float, tolerance: float, comparator: str = "le",
            informational: bool = False) -> CheckEntry:
        entry = CheckEntry(
            check_id=check_id,
            residual=float(residual),
            tolerance=float(tolerance),
            comparator=comparator,
            informational=informational,
        )
        self.checks.append(entry)
        return entry

    def failed_checks(self) -> List[CheckEntry]:
        return [check for check in self.checks if not check.passed]
