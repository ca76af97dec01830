"""Scenario runner: builds the mode pipeline of a scenario, runs its checks and exports."""

from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import dynamics, gbdt, matroot
from .artifacts import ArtifactWriter, flatten_complex
from .errors import ErrorContext, GBDTError, ScenarioError, SingularityError
from .logging_utils import EngineLogger
from .numkit import decode_complex, decode_complex_matrix, encode_complex_matrix, frobenius
from .schemas import (
    CheckThresholds,
    DiracInput,
    FunctionSpec,
    GeneralInput,
    JordanSpec,
    Report,
    RootsInput,
    Scenario,
    ScenarioMode,
    Settings,
    SymmetricInput,
    Tolerance,
)
from .snode import Signature, SNodeTriple, s_identity_residual, validate_snode

# Darboux and similarity checks use at most this many samples per z.
CHECK_POINTS = 100
TRANSFER_EXPORT_POINTS = 21


def jordan_from_spec(spec: JordanSpec) -> matroot.JordanForm:
    return matroot.JordanForm.from_json({"u": spec.u, "cells": spec.cells})


def function_from_spec(spec: FunctionSpec) -> matroot.SpectralFunction:
    if spec.kind == "shift":
        return matroot.SpectralFunction.shift(spec.z)
    if spec.kind == "quadratic":
        return matroot.SpectralFunction.quadratic(spec.c, spec.a, spec.sign)
    return matroot.SpectralFunction.resolvent_product(spec.c1, spec.c2)


def system_from_spec(spec: SymmetricInput) -> gbdt.SymmetricHamiltonianSystem:
    t = spec.triple
    triple = SNodeTriple(
        A=decode_complex_matrix(t.A, "A"),
        S0=decode_complex_matrix(t.S0, "S0"),
        Pi0=decode_complex_matrix(t.Pi0, "Pi0"),
        sig=Signature(t.m1, t.m2),
        poles=tuple(t.poles),
    )
    return gbdt.SymmetricHamiltonianSystem.from_triple(
        triple, [gbdt.CoefficientProvider.from_spec(b) for b in spec.betas]
    )


def general_from_spec(spec: GeneralInput) -> Tuple[gbdt.GeneralGBDTData, gbdt.RationalSystemCoeffs]:
    data = gbdt.GeneralGBDTData(
        A1=decode_complex_matrix(spec.A1, "A1"),
        A2=decode_complex_matrix(spec.A2, "A2"),
        Pi1_0=decode_complex_matrix(spec.Pi1_0, "Pi1_0"),
        Pi2_0=decode_complex_matrix(spec.Pi2_0, "Pi2_0"),
        S0=decode_complex_matrix(spec.S0, "S0"),
    )
    coeffs = gbdt.RationalSystemCoeffs(
        poly=[gbdt.CoefficientProvider.from_spec(q) for q in spec.poly],
        poles=[gbdt.PoleTerm(p.c, [gbdt.CoefficientProvider.from_spec(q) for q in p.terms]) for p in spec.poles],
    )
    return data, coeffs


def emit_plot_data(writer: ArtifactWriter, sys: gbdt.SymmetricHamiltonianSystem,
                   traj: gbdt.GBDTTrajectory) -> List[Path]:
    """residuals.csv, s_eigenvalues.csv and hamiltonian_shift.csv, one row per grid point."""
    residual_rows, eigen_rows, shift_rows = [], [], []
    for i, x in enumerate(traj.xs):
        Pi, S = traj.Pis[i], traj.Ss[i]
        residual_rows.append([
            float(x),
            s_identity_residual(sys.A, S, Pi, sys.sig),
            frobenius(S - S.conj().T),
            float(traj.cond_S[i]),
        ])
        eigen_rows.append([float(x), *np.linalg.eigvalsh((S + S.conj().T) / 2).tolist()])
        transformed = gbdt.transformed_hamiltonians(sys, Pi, S, float(x))
        shift_rows.append([float(x), *[frobenius(t.H - H) for t, H in zip(transformed, sys.hamiltonians(float(x)))]])

    n, r = sys.triple.n, sys.r
    return [
        writer.write_csv("residuals.csv", ["x", "identity", "hermiticity", "cond_S"], residual_rows),
        writer.write_csv("s_eigenvalues.csv", ["x", *[f"lambda_{k}" for k in range(n)]], eigen_rows),
        writer.write_csv("hamiltonian_shift.csv", ["x", *[f"shift_{k + 1}" for k in range(r)]], shift_rows),
    ]


class ScenarioRunner:
    """Runs one scenario: construct, verify, export."""

    def __init__(self, settings: Settings, logger: EngineLogger):
        self.settings = settings
        self.logger = logger
        # Pipeline phase reported in the error context: construct, verify or export.
        self.stage = "construct"

    def _thresholds(self, scenario: Scenario) -> CheckThresholds:
        if "thresholds" in scenario.model_fields_set:
            return scenario.thresholds
        return self.settings.thresholds

    def _tolerances(self, scenario: Scenario) -> Tolerance:
        if "tolerances" in scenario.model_fields_set:
            return scenario.tolerances
        return self.settings.tolerances

    def run(self, scenario: Scenario, out_dir: Path) -> Report:
        self.logger.scenario_start(scenario.name, scenario.mode.value)
        report = Report(scenario=scenario.name, mode=scenario.mode)
        writer = ArtifactWriter(out_dir)
        self.stage = "construct"
        try:
            pipeline = {
                ScenarioMode.ROOTS: self._run_roots,
                ScenarioMode.GBDT_SYM: self._run_symmetric,
                ScenarioMode.DYNAMICS: self._run_dynamics,
                ScenarioMode.GBDT_GENERAL: self._run_general,
                ScenarioMode.DIRAC: self._run_dirac,
            }[scenario.mode]
            pipeline(scenario, report, writer)
            self.stage = "export"
            report.artifacts = [str(p) for p in writer.written]
            report.artifacts.extend([str(out_dir / "report.json"), str(out_dir / "summary.md")])
            writer.write_report(report)
            writer.write_summary(report)
        except Exception as e:
            context = ErrorContext.from_exception(e, scenario.name, scenario.mode.value, self.stage)
            self.logger.error_with_context(e, context)
            writer.remove_outputs()
            if isinstance(e, GBDTError):
                raise
            if isinstance(e, np.linalg.LinAlgError):
                raise SingularityError(f"{scenario.name}: {e}") from e
            if isinstance(e, (ValueError, KeyError)):
                raise ScenarioError(f"{scenario.name}: {e}", field_name=scenario.name) from e
            raise

        self.logger.check_table(report)
        self.logger.scenario_end(scenario.name, report.passed, len(report.checks))
        return report

    # -- roots --------------------------------------------------------------

    def _run_roots(self, scenario: Scenario, report: Report, writer: ArtifactWriter) -> None:
        spec: RootsInput = scenario.roots
        th = self._thresholds(scenario)
        jf = jordan_from_spec(spec.jordan)
        f = function_from_spec(spec.function)
        branches = (matroot.BranchSpec(spec.ell, tuple(spec.branches)) if spec.branches is not None
                    else matroot.BranchSpec.default(spec.ell, len(jf.cells)))
        A = jf.assemble()
        fA = matroot.f_of_jordan(jf, f)
        Q = matroot.matrix_root(jf, f, branches)

        self.stage = "verify"
        root_scale = max(1.0, frobenius(fA))
        comm_scale = max(1.0, frobenius(A) * frobenius(Q))
        built = matroot.verify_root(A, Q, fA, spec.ell)
        report.add("roots.root_residual", built.root_residual / root_scale, th.root)
        report.add("roots.commutation", built.commutation_residual / comm_scale, th.commutation)

        exported = {"Q": encode_complex_matrix(Q), "fA": encode_complex_matrix(fA)}
        for candidate in spec.candidates:
            Qc = decode_complex_matrix(candidate.Q, candidate.name)
            checked = matroot.verify_root(A, Qc, fA, spec.ell)
            report.add(f"roots.{candidate.name}.root_residual", checked.root_residual / root_scale, th.root)
            if candidate.expect_commuting:
                report.add(f"roots.{candidate.name}.commutation", checked.commutation_residual, th.commutation)
            else:
                report.add(f"roots.{candidate.name}.noncommutation", checked.commutation_residual,
                           th.noncommuting, comparator="gt")

        if spec.family_z:
            family = [matroot.commuting_root_family(jf, z, spec.ell) for z in spec.family_z]
            eye = np.eye(jf.n)
            worst_root = max(
                frobenius(np.linalg.matrix_power(Qz, spec.ell) - (A - z * eye)) / max(1.0, frobenius(A - z * eye))
                for z, Qz in zip(spec.family_z, family)
            )
            worst_comm = max(
                (frobenius(P @ R - R @ P) for a, P in enumerate(family) for R in family[a + 1:]),
                default=0.0,
            )
            report.add("roots.family.root_residual", worst_root, th.root)
            report.add("roots.family.commutation", worst_comm, th.commutation)
            exported["family"] = {str(z): encode_complex_matrix(Qz) for z, Qz in zip(spec.family_z, family)}

        self.stage = "export"
        writer.write_json("roots.json", exported)

    # -- symmetric GBDT -----------------------------------------------------

    def _note_truncation(self, traj: gbdt.GBDTTrajectory, report: Report) -> None:
        if traj.truncated:
            report.errors.append(f"S(x) lost invertibility; checks stop at x={traj.xs[-1]:.6g}")

    def _z_samples(self, scenario: Scenario) -> List[complex]:
        return [decode_complex(z) for z in scenario.z_samples] or [0.5 + 1.0j]

    def _run_symmetric(self, scenario: Scenario, report: Report, writer: ArtifactWriter
                       ) -> Tuple[gbdt.SymmetricHamiltonianSystem, gbdt.GBDTTrajectory]:
        spec: SymmetricInput = scenario.symmetric
        th = self._thresholds(scenario)
        tol = self._tolerances(scenario)
        sys = system_from_spec(spec)
        node = validate_snode(sys.triple, tol.structural)
        traj = gbdt.symmetric_trajectory(sys, scenario.span, scenario.step, self.settings.singularity_threshold)

        self.stage = "verify"
        report.add("snode.identity", node.identity_residual, tol.structural)
        report.add("snode.hermiticity", node.hermiticity_residual, tol.structural)
        report.add("snode.pole_clearance", node.pole_clearance, 0.0, comparator="gt")
        self._note_truncation(traj, report)
        span = (float(traj.xs[0]), float(traj.xs[-1]))
        report.add("trajectory.coverage", abs(span[1] - span[0]) / abs(scenario.span[1] - scenario.span[0]),
                   1.0, informational=True)

        identity = max(s_identity_residual(sys.A, S, Pi, sys.sig) for Pi, S in zip(traj.Pis, traj.Ss))
        hermiticity = max(frobenius(S - S.conj().T) for S in traj.Ss)
        report.add("trajectory.identity", identity, tol.ode)
        report.add("trajectory.hermiticity", hermiticity, th.hermiticity)
        report.add("trajectory.monotonicity", gbdt.s_rate_max_eigenvalue(sys, traj.pi_trajectory()), th.monotonicity)

        report.add("transfer.j_unitarity_poles", gbdt.pole_j_unitarity(sys, traj), th.j_unitarity)
        indices = gbdt._sample_indices(len(traj), CHECK_POINTS)
        report.add("hamiltonians.similarity",
                   max(gbdt.similarity_residual(sys, traj.Pis[i], traj.Ss[i], float(traj.xs[i])) for i in indices),
                   th.similarity)
        psd = 0.0
        for i in indices:
            for t in gbdt.transformed_hamiltonians(sys, traj.Pis[i], traj.Ss[i], float(traj.xs[i])):
                psd = max(psd, -float(np.linalg.eigvalsh((t.H + t.H.conj().T) / 2).min()))
        report.add("hamiltonians.psd", psd, th.identity)

        zs = self._z_samples(scenario)
        for z in zs:
            report.add(f"darboux[{z}]", gbdt.darboux_residual(sys, traj, z, self.settings.fd_step, CHECK_POINTS),
                       th.darboux)
            if z.imag != 0:
                report.add(f"transfer.det_floor[{z}]", gbdt.determinant_floor(sys, traj, z), 1e-8, comparator="gt")
        report.add(f"solution_gap[{zs[0]}]", gbdt.transformed_solution_gap(sys, zs[0], span, scenario.step),
                   th.solution_gap)
        real_zs = [z.real for z in zs if z.imag == 0 and z.real not in sys.poles]
        for z, value in gbdt.j_unitarity_profile(sys, traj, real_zs).items():
            report.add(f"transfer.j_unitarity_real[{z}]", value, th.j_unitarity, informational=True)

        consistency = gbdt.reduction_consistency(sys, span, scenario.step)
        report.add("consistency.general_vs_symmetric", max(consistency.values()), th.consistency)

        if spec.closed_form == "trivial":
            self._check_trivial(sys, traj, report, th)
        elif spec.closed_form == "constant_beta":
            self._check_constant_beta(sys, traj, spec, report, th)

        self.stage = "export"
        writer.write_trajectory("trajectory.csv", traj.xs, traj.Pis, traj.Ss)
        writer.write_transfer_samples("transfer.json", self._transfer_samples(sys, traj, zs))
        emit_plot_data(writer, sys, traj)
        return sys, traj

    def _transfer_samples(self, sys: gbdt.SymmetricHamiltonianSystem, traj: gbdt.GBDTTrajectory,
                          zs: Sequence[complex]) -> Dict[str, List[dict]]:
        samples = {}
        for z in zs:
            samples[str(z)] = [
                {"x": float(traj.xs[i]),
                 "w": encode_complex_matrix(gbdt.symmetric_transfer_function(sys.A, traj.Ss[i], traj.Pis[i], sys.sig, z))}
                for i in gbdt._sample_indices(len(traj), TRANSFER_EXPORT_POINTS)
            ]
        return samples

    def _check_trivial(self, sys: gbdt.SymmetricHamiltonianSystem, traj: gbdt.GBDTTrajectory, report: Report,
                       th: CheckThresholds) -> None:
        cf = gbdt.closed_form_trivial(sys.triple)
        report.add("closed_form.s0", frobenius(cf.S0 - sys.triple.S0), th.closed_form)
        indices = gbdt._sample_indices(len(traj), CHECK_POINTS)
        report.add("closed_form.pi", max(frobenius(cf.pi(float(traj.xs[i])) - traj.Pis[i]) for i in indices),
                   th.closed_form)
        report.add("closed_form.s", max(frobenius(cf.s(float(traj.xs[i])) - traj.Ss[i]) for i in indices),
                   th.closed_form)

    def _check_constant_beta(self, sys: gbdt.SymmetricHamiltonianSystem, traj: gbdt.GBDTTrajectory,
                             spec: SymmetricInput, report: Report, th: CheckThresholds) -> None:
        if sys.r != 2 or not sys.betas_constant:
            raise ScenarioError("constant_beta closed form needs two poles with constant β", field_name="closed_form")
        beta1, beta2 = sys.betas[0](0.0), sys.betas[1](0.0)
        c1, c2 = sys.poles
        cb = gbdt.closed_form_constant_beta(sys.triple, beta1, beta2, c1, c2, jordan_from_spec(spec.jordan))
        indices = gbdt._sample_indices(len(traj), CHECK_POINTS)
        report.add("closed_form.pi0", frobenius(cb.pi(0.0) - sys.triple.Pi0), th.closed_form)
        report.add("closed_form.pi", max(frobenius(cb.pi(float(traj.xs[i])) - traj.Pis[i]) for i in indices),
                   th.closed_form)
        report.add("closed_form.phi", max(cb.phi_residual(float(traj.xs[i])) for i in indices), th.closed_form)

    # -- dynamics -----------------------------------------------------------

    def _run_dynamics(self, scenario: Scenario, report: Report, writer: ArtifactWriter) -> None:
        sys, traj = self._run_symmetric(scenario, report, writer)
        self.stage = "verify"
        th = self._thresholds(scenario)
        ev = dynamics.PsiEvaluator(traj, sys)
        zetas_list = [tuple(z) for z in scenario.zeta_samples] or [(0.0,) * sys.r]
        interior = [i for i in gbdt._sample_indices(len(traj), 22) if 0 < i < len(traj) - 1]

        pde, columns, zeta_gap = 0.0, 0.0, 0.0
        psi_points = []
        for zetas in zetas_list:
            for i in interior:
                pt = dynamics.MultiVarPoint(float(traj.xs[i]), zetas)
                pde = max(pde, dynamics.pde_residual(ev, pt).residual)
                columns = max(columns, max(dynamics.column_residuals(ev, pt)))
                zeta_gap = max(zeta_gap, max(dynamics.zeta_fd_gap(ev, pt, k) for k in range(sys.r)))
                psi_points.append(pt)
        report.add("dynamics.pde", pde, th.pde)
        report.add("dynamics.columns", columns, th.pde)
        report.add("dynamics.zeta_derivative", zeta_gap, th.pde)

        d1 = max(dynamics.d1_identity_residual(traj, sys, float(traj.xs[i])).residual for i in interior)
        conservation = max(dynamics.conservation_law_residual(traj, sys, float(traj.xs[i])).residual for i in interior)
        report.add("dynamics.d1_identity", d1, th.pde)
        report.add("dynamics.conservation", conservation, th.conservation)
        report.add("dynamics.conservation_integrated", dynamics.integrated_conservation_gap(traj, sys), th.conservation)

        self.stage = "export"
        header = ["x", *[f"zeta_{k + 1}" for k in range(sys.r)]]
        m, n = sys.sig.m, sys.triple.n
        for a in range(m):
            for b in range(n):
                header.extend([f"psi_{a}{b}_re", f"psi_{a}{b}_im"])
        writer.write_csv("psi.csv", header, dynamics.psi_samples(ev, psi_points))

    # -- general GBDT -------------------------------------------------------

    def _run_general(self, scenario: Scenario, report: Report, writer: ArtifactWriter) -> None:
        th = self._thresholds(scenario)
        tol = self._tolerances(scenario)
        data, coeffs = general_from_spec(scenario.general)
        traj = gbdt.general_trajectory(data, coeffs, scenario.span, scenario.step, self.settings.singularity_threshold)

        self.stage = "verify"
        report.add("general.identity0", data.identity_residual() / (1.0 + frobenius(data.S0)), tol.structural)
        self._note_truncation(traj, report)
        identity = max(
            data.identity_residual(S, Pi1, Pi2) / (1.0 + frobenius(S))
            for Pi1, Pi2, S in zip(traj.Pis, traj.Pi2s, traj.Ss)
        )
        report.add("general.trajectory_identity", identity, tol.ode)

        caches = gbdt._general_caches(data, coeffs)
        inverse_residual = max(
            gbdt.transformed_coeffs(data, coeffs, float(traj.xs[i]), traj.Pis[i], traj.Pi2s[i], traj.Ss[i],
                                    caches).inverse_residual
            for i in gbdt._sample_indices(len(traj), CHECK_POINTS)
        )
        report.add("general.pole_inverse", inverse_residual, th.identity)

        zs = self._z_samples(scenario)
        for z in zs:
            report.add(f"general.darboux[{z}]",
                       gbdt.general_darboux_residual(data, coeffs, traj, z, self.settings.fd_step, CHECK_POINTS),
                       th.darboux)

        self.stage = "export"
        writer.write_trajectory("trajectory.csv", traj.xs, traj.Pis, traj.Ss)
        writer.write_transfer_samples("transfer.json", {
            str(z): [
                {"x": float(traj.xs[i]), "w": encode_complex_matrix(gbdt.general_transfer_function(data, traj, i, z))}
                for i in gbdt._sample_indices(len(traj), TRANSFER_EXPORT_POINTS)
            ]
            for z in zs
        })
        writer.write_csv(
            "residuals.csv",
            ["x", "identity", "cond_S"],
            [[float(x), data.identity_residual(S, Pi1, Pi2) / (1.0 + frobenius(S)), float(c)]
             for x, Pi1, Pi2, S, c in zip(traj.xs, traj.Pis, traj.Pi2s, traj.Ss, traj.cond_S)],
        )

    # -- discrete Dirac -----------------------------------------------------

    def _run_dirac(self, scenario: Scenario, report: Report, writer: ArtifactWriter) -> None:
        spec: DiracInput = scenario.dirac
        th = self._thresholds(scenario)
        sig = Signature(spec.m1, spec.m2)
        j = sig.matrix
        rhos = [decode_complex_matrix(rho, "rho") for rho in spec.rhos]
        Cs = [matroot.halmos_extension(rho) for rho in rhos]

        self.stage = "verify"
        structure, recovered, root_law, root_structure = 0.0, 0.0, 0.0, 0.0
        for rho, C in zip(rhos, Cs):
            structure = max(structure, frobenius(C @ j @ C - j))
            recovered = max(recovered, frobenius(matroot.verblunsky_from_halmos(C, sig) - rho))
            for ell in spec.ells:
                R = matroot.positive_root_j(C, ell, sig)
                root_law = max(root_law, frobenius(np.linalg.matrix_power(R, ell) - C) / (1.0 + frobenius(C)))
                root_structure = max(root_structure, frobenius(R @ j @ R - j))
        report.add("dirac.halmos_structure", structure, th.dirac)
        report.add("dirac.verblunsky_roundtrip", recovered, th.dirac)
        report.add("dirac.root_law", root_law, th.dirac)
        report.add("dirac.root_structure", root_structure, th.dirac)

        z = decode_complex(spec.z)
        y0 = np.array([decode_complex(v) for v in spec.y0], dtype=np.complex128)
        y = matroot.discrete_dirac_evolve(Cs, z, y0, sig)
        W = matroot.dirac_transfer_product(Cs, z, sig)
        report.add("dirac.evolution_vs_product", float(np.linalg.norm(y - W @ y0)) / (1.0 + float(np.linalg.norm(y))),
                   th.dirac)

        self.stage = "export"
        writer.write_json("dirac.json", {
            "z": [z.real, z.imag],
            "y_final": [[v.real, v.imag] for v in y],
            "transfer": encode_complex_matrix(W),
            "halmos": [encode_complex_matrix(C) for C in Cs],
        })
        writer.write_csv(
            "dirac_steps.csv",
            ["k", *[f"y_{a}_{part}" for a in range(sig.m) for part in ("re", "im")]],
            [[k, *flatten_complex(matroot.discrete_dirac_evolve(Cs[:k], z, y0, sig))] for k in range(len(Cs) + 1)],
        )
