"""Logging utilities for the GBDT Engine."""

import json
import logging
import traceback
from pathlib import Path
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from .errors import ErrorContext
from .schemas import Report

PACKAGE_LOGGER = "gbdt_engine"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def _file_handler(path: Path) -> logging.Handler:
    """Plain-text DEBUG log next to the run outputs."""
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path)
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(FILE_FORMAT))
    return handler


class EngineLogger:
    """Console and optional file logging for the `gbdt_engine` logger tree.

    Numerical modules log through children of that logger, so one handler
    set covers the whole package.
    """

    def __init__(self, debug_mode: bool = False, log_file: Optional[Path] = None):
        self.debug_mode = debug_mode
        self.console = Console()
        self.logger = logging.getLogger(PACKAGE_LOGGER)
        for handler in list(self.logger.handlers):
            handler.close()
            self.logger.removeHandler(handler)

        level = logging.DEBUG if debug_mode else logging.INFO
        self.logger.setLevel(logging.DEBUG if log_file else level)
        rich_handler = RichHandler(console=self.console, show_time=True, show_path=debug_mode, markup=True)
        rich_handler.setLevel(level)
        self.logger.addHandler(rich_handler)
        if log_file:
            self.logger.addHandler(_file_handler(log_file))

    def error(self, message: str) -> None:
        self.logger.error(message)

    def scenario_start(self, name: str, mode: str) -> None:
        """Log scenario start with rich formatting."""
        self.console.print(f"\n[bold blue]▶ Scenario {name}[/bold blue] [dim]({mode})[/dim]")

    def scenario_end(self, name: str, passed: bool, n_checks: int) -> None:
        """Log scenario end with results."""
        status = "[bold green]✅ PASS[/bold green]" if passed else "[bold red]❌ FAIL[/bold red]"
        self.console.print(f"[bold]Scenario {name}[/bold] {status} [dim]({n_checks} checks)[/dim]\n")

    def check_table(self, report: Report) -> None:
        """Print the residual checks of a report."""
        table = Table(title=f"Checks: {report.scenario}")
        table.add_column("Check", style="cyan")
        table.add_column("Residual", justify="right")
        table.add_column("Tolerance", justify="right")
        table.add_column("Result")

        for check in report.checks:
            if check.informational:
                verdict = "[dim]info[/dim]"
            else:
                verdict = "[green]PASS[/green]" if check.passed else "[red]FAIL[/red]"
            relation = ">" if check.comparator == "gt" else "≤"
            table.add_row(check.check_id, f"{check.residual:.3e}", f"{relation} {check.tolerance:.1e}", verdict)

        self.console.print(table)

    def error_with_context(self, error: Exception, context: ErrorContext) -> None:
        """Log error with context."""
        self.console.print(f"[bold red]Error in {context.scenario} ({context.stage}):[/bold red]")
        self.console.print(f"[red]{context.error_type}: {error}[/red]")
        self.logger.debug(json.dumps(context.to_dict()))
        if self.debug_mode:
            self.console.print(f"[dim]{traceback.format_exc()}[/dim]")


class ProgressTracker:
    """Progress bar for batch runs."""

    def __init__(self, console: Console, total: int):
        self.console = console
        self.total = total
        self.progress: Optional[Progress] = None
        self._task = None

    def __enter__(self) -> "ProgressTracker":
        self.progress = Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            console=self.console
        )
        self.progress.start()
        self._task = self.progress.add_task("scenarios", total=self.total)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.progress:
            self.progress.stop()

    def advance(self, description: str) -> None:
        if self.progress is not None:
            self.progress.update(self._task, advance=1, description=description)


def setup_logging(debug_mode: bool = False, log_file: Optional[Path] = None) -> EngineLogger:
    """Setup and return the engine logger."""
    return EngineLogger(debug_mode=debug_mode, log_file=log_file)
