"""Structured matrix roots, Darboux matrices and GBDT verification for generalised Hamiltonian systems."""

__version__ = "0.1.0"
__author__ = "GBDT Engine Team"

from .main import main
from .schemas import Report, Scenario, Settings, Tolerance
from .snode import Signature, SNodeTriple

__all__ = [
    "main",
    "Report",
    "Scenario",
    "Settings",
    "Tolerance",
    "Signature",
    "SNodeTriple",
]
