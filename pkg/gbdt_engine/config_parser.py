"""Configuration parser for Markdown files with YAML blocks."""

import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from markdown_it import MarkdownIt
from pydantic import ValidationError

from .errors import ScenarioError
from .schemas import Settings

# Overrides Settings.output_dir; CLI flags still win.
OUTPUT_ENV_VAR = "GBDT_ENGINE_OUT"

DEFAULT_SETTINGS_MD = """# Settings

Numerical defaults for `gbdt-engine`. Scenario files may override the
tolerances and thresholds; command-line flags override everything here.

```yaml
tolerances:
  structural: 1.0e-10
  ode: 1.0e-6

step: 1.0e-3
fd_step: 1.0e-5
singularity_threshold: 1.0e12

output_dir: "./gbdt_out"
batch_workers: 4

thresholds:
  darboux: 1.0e-5
  solution_gap: 1.0e-6
  pde: 1.0e-4
  conservation: 1.0e-4

debug_mode: false
```
"""


class ConfigParser:
    """Parser for Markdown configuration files with YAML blocks."""

    def __init__(self):
        self.md = MarkdownIt()

    def parse_settings(self, config_dir: Path) -> Settings:
        """Parse settings from config/settings.md."""
        settings_file = config_dir / "settings.md"

        if not settings_file.exists():
            return self.apply_environment(Settings())

        yaml_block = self._extract_yaml_block(settings_file.read_text())
        if not yaml_block:
            return self.apply_environment(Settings())

        try:
            settings_dict = yaml.safe_load(yaml_block) or {}
            return self.apply_environment(Settings(**settings_dict))
        except (yaml.YAMLError, ValidationError, TypeError) as e:
            raise ScenarioError(f"failed to parse settings: {e}", field_name=str(settings_file)) from e

    def apply_environment(self, settings: Settings) -> Settings:
        out_dir = os.environ.get(OUTPUT_ENV_VAR)
        if out_dir:
            return settings.model_copy(update={"output_dir": out_dir})
        return settings

    def _extract_yaml_block(self, content: str) -> Optional[str]:
        """First ```yaml fence of the document."""
        for token in self.md.parse(content):
            if token.type == "fence" and token.info.strip().lower() in ("yaml", "yml"):
                return token.content.strip()
        return None

    def settings_as_dict(self, settings: Settings) -> Dict[str, Any]:
        return settings.model_dump(mode="json")

    def create_default_configs(self, config_dir: Path) -> None:
        """Create the default settings file if it doesn't exist."""
        config_dir.mkdir(parents=True, exist_ok=True)
        settings_file = config_dir / "settings.md"
        if not settings_file.exists():
            settings_file.write_text(DEFAULT_SETTINGS_MD)
