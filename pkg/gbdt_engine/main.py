"""Main CLI entry point for the GBDT Engine."""

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError
from rich.console import Console
from rich.panel import Panel

from .config_parser import ConfigParser
from .errors import GBDTError, ScenarioError, exit_code_for
from .logging_utils import EngineLogger, ProgressTracker, setup_logging
from .scenario_generator import generate_scenario, scenario_to_json, write_scenario
from .scenario_runner import ScenarioRunner, emit_plot_data
from .schemas import Report, Scenario, Settings

__all__ = ["main", "load_scenario", "run_scenario", "run_batch", "emit_plot_data", "generate_scenario"]


def load_scenario(path: Path) -> Scenario:
    """Read and validate a scenario file; every failure is an input error."""
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ScenarioError(f"scenario file not found: {path}", field_name=str(path)) from e
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON in {path}: {e}", field_name=str(path)) from e
    try:
        return Scenario.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "scenario"
        raise ScenarioError(f"{path}: {field}: {first['msg']}", field_name=field) from e


def run_scenario(path: Path, settings: Settings, logger: EngineLogger, out_dir: Optional[Path] = None,
                 step: Optional[float] = None, force_tolerances: bool = False) -> Report:
    """Run one scenario file; outputs go to out_dir (default: <output_dir>/<scenario name>)."""
    scenario = load_scenario(path)
    if step is not None:
        scenario = scenario.model_copy(update={"step": step})
    elif "step" not in scenario.model_fields_set:
        scenario = scenario.model_copy(update={"step": settings.step})
    if force_tolerances or "tolerances" not in scenario.model_fields_set:
        scenario = scenario.model_copy(update={"tolerances": settings.tolerances})
    target = out_dir or Path(settings.output_dir) / scenario.name
    return ScenarioRunner(settings, logger).run(scenario, target)


def run_batch(directory: Path, settings: Settings, logger: EngineLogger,
              step: Optional[float] = None, force_tolerances: bool = False) -> Dict[str, int]:
    """Run every *.json scenario of a directory concurrently; returns exit codes by file name."""
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        raise ScenarioError(f"no scenario files in {directory}", field_name=str(directory))

    def one(path: Path) -> int:
        try:
            report = run_scenario(path, settings, logger, Path(settings.output_dir) / path.stem, step,
                                  force_tolerances)
            return 0 if report.passed else 1
        except GBDTError as e:
            logger.error(f"{path.name}: {e}")
            return exit_code_for(e)

    codes: Dict[str, int] = {}
    with ProgressTracker(logger.console, len(files)) as progress:
        with ThreadPoolExecutor(max_workers=settings.batch_workers) as pool:
            for path, code in zip(files, pool.map(one, files)):
                codes[path.name] = code
                progress.advance(path.name)
    return codes


def apply_overrides(settings: Settings, args: argparse.Namespace) -> Settings:
    """Command-line flags win over config/settings.md and GBDT_ENGINE_OUT."""
    data = settings.model_dump()
    if args.tol_structural is not None:
        data["tolerances"]["structural"] = args.tol_structural
    if args.tol_ode is not None:
        data["tolerances"]["ode"] = args.tol_ode
    if args.out is not None:
        data["output_dir"] = str(args.out)
    if args.step is not None:
        data["step"] = args.step
    if args.debug:
        data["debug_mode"] = True
    try:
        return Settings.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(f"invalid command-line override: {e.errors()[0]['msg']}", field_name="flags") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbdt-engine",
        description="Darboux matrices, structured matrix roots and GBDT verification scenarios",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Run a bundled scenario
  gbdt-engine run scenarios/trivial_hamiltonians.json

  # Generate a random symmetric GBDT scenario
  gbdt-engine gen gbdt-sym --n 3 --m1 1 --m2 1 --r 2 --seed 7 > sym.json

  # Run a directory of scenarios concurrently
  gbdt-engine batch scenarios --out ./gbdt_out

Exit codes: 0 all checks pass, 1 check failure or numerical error, 2 input error.
        """
    )
    parser.add_argument("command", choices=["run", "gen", "batch"], help="Command to execute")
    parser.add_argument("target", help="Scenario file (run), kind (gen) or directory (batch)")

    parser.add_argument("--config-dir", type=Path, default=Path("./config"),
                        help="Configuration directory (default: ./config)")
    parser.add_argument("--out", type=Path, help="Output directory (overrides config and GBDT_ENGINE_OUT)")
    parser.add_argument("--step", type=float, help="Integration step (overrides the scenario)")
    parser.add_argument("--tol-structural", type=float, help="Structural tolerance")
    parser.add_argument("--tol-ode", type=float, help="ODE tolerance")
    parser.add_argument("--debug", action="store_true", help="Enable debug mode")
    parser.add_argument("--log-file", type=Path, help="Also write a DEBUG log to this file")

    gen = parser.add_argument_group("gen options")
    gen.add_argument("--n", type=int, default=2, help="Order of A (default: 2)")
    gen.add_argument("--m1", type=int, default=1, help="Positive part of the signature (default: 1)")
    gen.add_argument("--m2", type=int, default=1, help="Negative part of the signature (default: 1)")
    gen.add_argument("--r", type=int, default=2, help="Number of poles (default: 2)")
    gen.add_argument("--steps", type=int, help="Grid steps on [0, 1], or factors for dirac")
    gen.add_argument("--seed", type=int, default=0, help="Generator seed (default: 0)")
    gen.add_argument("--file", type=Path, help="Write the scenario here instead of stdout")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    logger = setup_logging(debug_mode=args.debug, log_file=args.log_file)
    console = logger.console

    try:
        if args.command == "gen":
            return run_gen(args, console)

        config_parser = ConfigParser()
        settings = apply_overrides(config_parser.parse_settings(args.config_dir), args)
        tolerance_flags = args.tol_structural is not None or args.tol_ode is not None

        console.print(Panel(
            f"[bold blue]GBDT Engine[/bold blue]\n"
            f"[dim]Structured matrix roots and Darboux matrices[/dim]\n\n"
            f"• Command: {args.command} {args.target}\n"
            f"• Output: {settings.output_dir}\n"
            f"• Tolerances: structural {settings.tolerances.structural:.1e}, ode {settings.tolerances.ode:.1e}",
            title="Welcome",
            border_style="blue"
        ))

        if args.command == "run":
            report = run_scenario(Path(args.target), settings, logger, step=args.step,
                                  force_tolerances=tolerance_flags)
            return 0 if report.passed else 1

        codes = run_batch(Path(args.target), settings, logger, args.step, tolerance_flags)
        failed = {name: code for name, code in codes.items() if code != 0}
        console.print(Panel(
            f"[bold]Batch Results Summary:[/bold]\n"
            f"• Scenarios: {len(codes)}\n"
            f"• Passed: {len(codes) - len(failed)}\n"
            f"• Failed: {len(failed)}",
            title="Batch Complete",
            border_style="green" if not failed else "yellow"
        ))
        return max(codes.values(), default=0)

    except KeyboardInterrupt:
        console.print("\n[yellow]Operation cancelled by user[/yellow]")
        return 130
    except GBDTError as e:
        console.print(f"[red]{type(e).__name__}: {e}[/red]")
        return exit_code_for(e)


def run_gen(args: argparse.Namespace, console: Console) -> int:
    scenario = generate_scenario(args.target, n=args.n, m1=args.m1, m2=args.m2, r=args.r,
                                 seed=args.seed, steps=args.steps)
    if args.file is not None:
        write_scenario(scenario, args.file)
        console.print(f"[green]✅ Wrote {args.file}[/green]")
    else:
        sys.stdout.write(scenario_to_json(scenario))
    return 0


if __name__ == "__main__":
    sys.exit(main())
