"""Random well-posed scenarios for every pipeline.

All draws go through ``numpy.random.default_rng(seed)`` (PCG64), so a seed
fixes the emitted file byte for byte.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import ScenarioError
from .numkit import encode_complex_matrix
from .schemas import Scenario, ScenarioMode
from .snode import Signature, pole_clearance

logger = logging.getLogger(__name__)

POLE_RANGE = 3.0
POLE_SEPARATION = 0.5
POLE_CLEARANCE = 0.5
MAX_POLE_DRAWS = 1000
DIRAC_DEFAULT_STEPS = 5
ODE_DEFAULT_STEPS = 1000


def _complex_normal(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _hermitian(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    M = _complex_normal(rng, (n, n), scale)
    return (M + M.conj().T) / 2


def _constant(M: np.ndarray) -> Dict[str, Any]:
    return {"constant": encode_complex_matrix(M)}


def sample_poles(rng: np.random.Generator, matrices: List[np.ndarray], r: int) -> List[float]:
    """r real poles in [−3, 3], pairwise ≥ 0.5 apart and ≥ 0.5 from every spectrum."""
    poles: List[float] = []
    for _ in range(MAX_POLE_DRAWS):
        if len(poles) == r:
            break
        c = round(float(rng.uniform(-POLE_RANGE, POLE_RANGE)), 6)
        if any(abs(c - p) < POLE_SEPARATION for p in poles):
            continue
        if any(pole_clearance(M, [c]) < POLE_CLEARANCE for M in matrices):
            continue
        poles.append(c)
    if len(poles) < r:
        raise ScenarioError(f"could not place {r} separated poles clear of the spectrum", field_name="r")
    return sorted(poles)


def _symmetric_inputs(rng: np.random.Generator, n: int, sig: Signature, r: int) -> Dict[str, Any]:
    # S(0) = −I forces A − A* = −iΠjΠ*, so the S-node identity holds exactly.
    Pi0 = _complex_normal(rng, (n, sig.m), 0.5)
    A = _hermitian(rng, n, 0.5) - 0.5j * Pi0 @ sig.matrix @ Pi0.conj().T
    poles = sample_poles(rng, [A], r)
    betas = [_constant(_complex_normal(rng, (sig.m, sig.m), 0.5)) for _ in range(r)]
    return {
        "triple": {
            "A": encode_complex_matrix(A),
            "S0": encode_complex_matrix(-np.eye(n)),
            "Pi0": encode_complex_matrix(Pi0),
            "m1": sig.m1,
            "m2": sig.m2,
            "poles": poles,
        },
        "betas": betas,
    }


def _general_inputs(rng: np.random.Generator, n: int, m: int, r: int) -> Dict[str, Any]:
    A1 = _complex_normal(rng, (n, n))
    Pi1 = _complex_normal(rng, (n, m), 0.5)
    Pi2 = _complex_normal(rng, (n, m), 0.5)
    A2 = A1 + Pi1 @ Pi2.conj().T
    poles = sample_poles(rng, [A1, A2], r)
    return {
        "A1": encode_complex_matrix(A1),
        "A2": encode_complex_matrix(A2),
        "Pi1_0": encode_complex_matrix(Pi1),
        "Pi2_0": encode_complex_matrix(Pi2),
        "S0": encode_complex_matrix(-np.eye(n)),
        "poly": [_constant(_complex_normal(rng, (m, m), 0.2)), _constant(_complex_normal(rng, (m, m), 0.1))],
        "poles": [
            {"c": c, "terms": [_constant(_complex_normal(rng, (m, m), 0.2)) for _ in range(1 + k % 2)]}
            for k, c in enumerate(poles)
        ],
    }


def _off_spectrum_z(matrices: List[np.ndarray]) -> List[float]:
    height = max(float(np.abs(np.linalg.eigvals(M).imag).max()) for M in matrices)
    return [0.5, round(height + 1.0, 6)]


def _roots_inputs(rng: np.random.Generator, n: int) -> Dict[str, Any]:
    sizes: List[int] = []
    while sum(sizes) < n:
        sizes.append(int(rng.integers(1, min(3, n - sum(sizes)) + 1)))
    cells = []
    for p in sizes:
        mu = _complex_normal(rng, (), 2.0)
        cells.append([round(float(mu.real), 6), round(float(mu.imag), 6), p])
    u = np.eye(n) + _complex_normal(rng, (n, n), 0.3 / np.sqrt(n))
    # z below every eigenvalue keeps f(μ) = μ − z away from the branch point.
    z = round(min(c[0] for c in cells) - 1.0, 6)
    return {
        "jordan": {"u": encode_complex_matrix(u), "cells": cells},
        "function": {"kind": "shift", "z": z},
        "ell": 2,
        "family_z": [z, round(z - 0.5, 6)],
    }


def _dirac_inputs(rng: np.random.Generator, sig: Signature, steps: int) -> Dict[str, Any]:
    rhos = []
    for _ in range(steps):
        rho = _complex_normal(rng, (sig.m1, sig.m2))
        rho *= 0.9 * float(rng.uniform(0.1, 1.0)) / float(np.linalg.norm(rho, 2))
        rhos.append(encode_complex_matrix(rho))
    return {
        "m1": sig.m1,
        "m2": sig.m2,
        "rhos": rhos,
        "z": [1.0, 0.5],
        "y0": [[1.0, 0.0]] + [[0.0, 0.0]] * (sig.m - 1),
    }


def generate_scenario(kind: str, n: int = 2, m1: int = 1, m2: int = 1, r: int = 2, seed: int = 0,
                      steps: Optional[int] = None) -> Scenario:
    """A random scenario of the given mode; deterministic in all arguments."""
    try:
        mode = ScenarioMode(kind)
    except ValueError as e:
        raise ScenarioError(f"unknown scenario kind '{kind}'", field_name="kind") from e
    if n < 1 or r < 1 or m1 < 0 or m2 < 0 or m1 + m2 < 1:
        raise ScenarioError("dimensions must satisfy n ≥ 1, r ≥ 1, m1 + m2 ≥ 1", field_name="dimensions")
    if mode == ScenarioMode.DIRAC and (m1 < 1 or m2 < 1):
        raise ScenarioError("discrete Dirac scenarios need m1 ≥ 1 and m2 ≥ 1", field_name="dimensions")

    rng = np.random.default_rng(seed)
    sig = Signature(m1, m2)
    ode_steps = steps or ODE_DEFAULT_STEPS
    data: Dict[str, Any] = {
        "name": f"{kind}-n{n}-m{m1}_{m2}-r{r}-seed{seed}",
        "mode": mode.value,
        "seed": seed,
        "span": [0.0, 1.0],
        "step": 1.0 / ode_steps,
    }

    if mode in (ScenarioMode.GBDT_SYM, ScenarioMode.DYNAMICS):
        data["symmetric"] = _symmetric_inputs(rng, n, sig, r)
        data["z_samples"] = [[0.5, 1.0], [-0.25, 2.0]]
        if mode == ScenarioMode.DYNAMICS:
            data["zeta_samples"] = [[0.0] * r, [0.1 * (k + 1) for k in range(r)]]
    elif mode == ScenarioMode.GBDT_GENERAL:
        general = _general_inputs(rng, n, sig.m, r)
        A1 = np.array([[complex(*v) for v in row] for row in general["A1"]])
        data["general"] = general
        data["z_samples"] = [_off_spectrum_z([A1])]
    elif mode == ScenarioMode.ROOTS:
        data["roots"] = _roots_inputs(rng, n)
    else:
        data["dirac"] = _dirac_inputs(rng, sig, steps or DIRAC_DEFAULT_STEPS)

    scenario = Scenario.model_validate(data)
    logger.debug(f"generated scenario {scenario.name}")
    return scenario


def scenario_to_json(scenario: Scenario) -> str:
    """Serialise without tolerance blocks so the engine settings stay in charge."""
    data = scenario.model_dump(mode="json", exclude_none=True, exclude={"tolerances", "thresholds"})
    return json.dumps(data, indent=2) + "\n"


def write_scenario(scenario: Scenario, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(scenario_to_json(scenario))
    return path
