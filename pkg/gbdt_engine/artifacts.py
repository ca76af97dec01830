"""
Run artifacts for the GBDT Engine.
Writes residual reports, Markdown summaries, trajectory and plot CSVs.
"""

import csv
import json
import logging
import shutil
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np

from .schemas import Report

logger = logging.getLogger(__name__)


def matrix_columns(prefix: str, shape: Sequence[int]) -> List[str]:
    """Column names for a flattened complex matrix, re/im interleaved."""
    names = []
    for a in range(shape[0]):
        for b in range(shape[1]):
            names.extend([f"{prefix}_{a}{b}_re", f"{prefix}_{a}{b}_im"])
    return names


def flatten_complex(M: np.ndarray) -> List[float]:
    out: List[float] = []
    for value in np.asarray(M).ravel():
        out.extend([float(value.real), float(value.imag)])
    return out


class ArtifactWriter:
    """Writes every export of one scenario run into its output directory."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[Path] = []

    def _track(self, path: Path) -> Path:
        self.written.append(path)
        logger.debug(f"wrote {path}")
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        path = self.out_dir / name
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
        return self._track(path)

    def write_json(self, name: str, data: Any) -> Path:
        path = self.out_dir / name
        with open(path, "w") as f:
            json.dump(data, f, indent=2)
        return self._track(path)

    def write_trajectory(self, name: str, xs: np.ndarray, Pis: np.ndarray, Ss: np.ndarray) -> Path:
        """x, Π entries, S entries."""
        header = ["x", *matrix_columns("Pi", Pis[0].shape), *matrix_columns("S", Ss[0].shape)]
        rows = [[float(x), *flatten_complex(Pi), *flatten_complex(S)] for x, Pi, S in zip(xs, Pis, Ss)]
        return self.write_csv(name, header, rows)

    def write_transfer_samples(self, name: str, samples: Dict[str, List[Dict[str, Any]]]) -> Path:
        """w_A samples keyed by z: {z: [{"x": x, "w": [[[re, im], ...], ...]}, ...]}."""
        return self.write_json(name, samples)

    def write_report(self, report: Report) -> Path:
        data = report.model_dump(mode="json")
        data["passed"] = report.passed
        data["generated"] = datetime.now().isoformat()
        for entry, check in zip(data["checks"], report.checks):
            entry["passed"] = check.passed
        return self.write_json("report.json", data)

    def write_summary(self, report: Report) -> Path:
        path = self.out_dir / "summary.md"
        path.write_text(render_summary(report))
        return self._track(path)

    def remove_outputs(self) -> None:
        """Delete everything this writer produced, and the directory when it ends up empty."""
        for path in self.written:
            path.unlink(missing_ok=True)
        self.written.clear()
        if self.out_dir.exists() and not any(self.out_dir.iterdir()):
            shutil.rmtree(self.out_dir)


def render_summary(report: Report) -> str:
    lines = []
    status = "✅ PASS" if report.passed else "❌ FAIL"
    lines.append(f"# Scenario {report.scenario}")
    lines.append("")
    lines.append(f"- **Mode**: {report.mode.value}")
    lines.append(f"- **Status**: {status}")
    lines.append(f"- **Checks**: {len(report.checks)} ({len(report.failed_checks())} failed)")
    lines.append("")

    lines.append("## Checks")
    lines.append("")
    lines.append("| Check | Residual | Tolerance | Result |")
    lines.append("|-------|----------|-----------|--------|")
    for check in report.checks:
        relation = ">" if check.comparator == "gt" else "≤"
        verdict = "info" if check.informational else ("PASS" if check.passed else "FAIL")
        lines.append(f"| {check.check_id} | {check.residual:.3e} | {relation} {check.tolerance:.1e} | {verdict} |")
    lines.append("")

    if report.errors:
        lines.append("## Errors")
        for error in report.errors:
            lines.append(f"- {error}")
        lines.append("")

    if report.artifacts:
        lines.append("## Artifacts")
        for artifact in report.artifacts:
            lines.append(f"- `{artifact}`")
        lines.append("")

    return "\n".join(lines)
