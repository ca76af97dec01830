"""Shared fixtures: the two-pole example system and seeded random instances."""

from pathlib import Path

import numpy as np
import pytest

from gbdt_engine.gbdt import CoefficientProvider, SymmetricHamiltonianSystem
from gbdt_engine.scenario_generator import sample_poles
from gbdt_engine.snode import Signature, SNodeTriple

REPO_ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = REPO_ROOT / "scenarios"

EXAMPLE_A = np.diag([1 - 1j, -1 - 2j])
EXAMPLE_THETA1 = np.array([[1.0], [1.0]])
EXAMPLE_THETA2 = np.array([[0.1], [0.1]])
EXAMPLE_POLES = (-2.0, 2.0)


def example_c1() -> np.ndarray:
    """Solution of A C − C A* = i θ1 θ1* for the example A, written out by hand."""
    return np.array([[-0.5, (-3 + 2j) / 13], [(-3 - 2j) / 13, -0.25]])


def random_complex(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_symmetric_triple(rng: np.random.Generator, n: int, m1: int, m2: int, r: int = 2) -> SNodeTriple:
    """S(0) = −I and A = H − (i/2)ΠjΠ* satisfy the S-node identity exactly."""
    sig = Signature(m1, m2)
    Pi0 = random_complex(rng, (n, sig.m), 0.5)
    H = random_complex(rng, (n, n), 0.5)
    A = (H + H.conj().T) / 2 - 0.5j * Pi0 @ sig.matrix @ Pi0.conj().T
    return SNodeTriple(A=A, S0=-np.eye(n), Pi0=Pi0, sig=sig, poles=tuple(sample_poles(rng, [A], r)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def example_triple() -> SNodeTriple:
    C1 = example_c1()
    return SNodeTriple(
        A=EXAMPLE_A,
        S0=0.99 * C1,
        Pi0=np.hstack([EXAMPLE_THETA1, EXAMPLE_THETA2]),
        sig=Signature(1, 1),
        poles=EXAMPLE_POLES,
    )


@pytest.fixture
def trivial_system(example_triple) -> SymmetricHamiltonianSystem:
    betas = [CoefficientProvider.constant(np.eye(2)) for _ in EXAMPLE_POLES]
    return SymmetricHamiltonianSystem.from_triple(example_triple, betas)


@pytest.fixture
def rank_one_system(example_triple) -> SymmetricHamiltonianSystem:
    beta1 = np.array([[1.0, 1.0]]) / np.sqrt(2)
    beta2 = np.array([[1.0, -1.0]]) / np.sqrt(2)
    return SymmetricHamiltonianSystem.from_triple(
        example_triple, [CoefficientProvider.constant(beta1), CoefficientProvider.constant(beta2)]
    )
