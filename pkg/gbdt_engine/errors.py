"""
Error types for the GBDT Engine.
Every numerical failure is a GBDTError; the CLI maps them to exit codes.
"""

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, Optional

from pydantic import ValidationError


class ErrorSeverity(Enum):
    """Error severity levels."""
    INPUT = "input"
    NUMERICAL = "numerical"


class GBDTError(Exception):
    """Base class for all engine errors."""

    severity = ErrorSeverity.NUMERICAL


class DimensionError(GBDTError):
    """Matrix shapes do not fit together."""


class SingularityError(GBDTError):
    """A matrix that must be inverted is singular to working tolerance."""

    def __init__(self, message: str, cond: float = float("inf"), x: Optional[float] = None):
        if x is not None:
            message = f"{message} at x={x:.6g}"
        super().__init__(f"{message} (cond ≈ {cond:.3e})")
        self.cond = cond
        self.x = x


class SpectrumClashError(GBDTError):
    """A pole or evaluation point hits the spectrum of A."""

    def __init__(self, message: str, value: complex):
        super().__init__(f"{message}: {value}")
        self.value = value


class IntegrationError(GBDTError):
    """The ODE right-hand side produced non-finite values."""

    def __init__(self, message: str, x: float):
        super().__init__(f"{message} at x={x:.6g}")
        self.x = x


class EigenvalueSymmetryError(GBDTError):
    """σ(A) and σ(A*) intersect, so the Sylvester equation is not uniquely solvable."""


class StructureError(GBDTError):
    """An input violates a required algebraic structure (Hermitian, CjC=j, ...)."""


class BranchPointError(GBDTError):
    """The root series was asked to expand around zero."""


class ContractionError(GBDTError):
    """A Halmos extension was requested for a non-strict contraction."""


class DefinitenessError(GBDTError):
    """A matrix expected to be positive definite is not."""


class PoleError(GBDTError):
    """The spectral parameter sits on a pole of the system."""


class GridError(GBDTError):
    """Trajectories or evaluation points are not on a compatible grid."""


class ScenarioError(GBDTError):
    """A scenario file does not match the schema."""

    severity = ErrorSeverity.INPUT

    def __init__(self, message: str, field_name: Optional[str] = None):
        if field_name:
            message = f"{field_name}: {message}"
        super().__init__(message)
        self.field_name = field_name


@dataclass
class ErrorContext:
    """Context information for an error raised while running a scenario."""
    scenario: str
    mode: str
    stage: str
    error_type: str
    error_message: str
    severity: ErrorSeverity
    timestamp: str = field(default_factory=lambda: datetime.now().isoformat())
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_exception(cls, error: Exception, scenario: str, mode: str, stage: str) -> "ErrorContext":
        """Create error context from exception and pipeline position."""
        return cls(
            scenario=scenario,
            mode=mode,
            stage=stage,
            error_type=type(error).__name__,
            error_message=str(error),
            severity=severity_of(error),
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["severity"] = self.severity.value
        return data

    def __str__(self) -> str:
        return f"[{self.scenario}/{self.mode}:{self.stage}] {self.error_type}: {self.error_message}"


def severity_of(error: Exception) -> ErrorSeverity:
    """Classify an exception as an input problem or a numerical failure."""
    if isinstance(error, GBDTError):
        return error.severity
    if isinstance(error, (ValidationError, json.JSONDecodeError, FileNotFoundError, IsADirectoryError)):
        return ErrorSeverity.INPUT
    return ErrorSeverity.NUMERICAL


def exit_code_for(error: Exception) -> int:
    """Map an exception to the CLI exit code contract (1 = failure, 2 = input error)."""
    return 2 if severity_of(error) is ErrorSeverity.INPUT else 1
