"""
Configuration settings for the segmentation toolkit.
Loads process-level settings from the environment and run-level
configuration from YAML files with command-line overrides.
"""
from pathlib import Path
from typing import Any, Dict, Optional
import logging

import yaml
from pydantic import ValidationError
from pydantic_settings import BaseSettings

from nucleiseg.exceptions import ConfigError
from nucleiseg.schemas import RunConfig

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Process settings loaded from environment variables"""

    # Application Info
    app_name: str = "Gray-Matter Nuclei Segmentation Toolkit"
    version: str = "1.0.0"

    # Compute
    device: str = "cpu"
    num_workers: int = 0  # 0 keeps sampling in-process and deterministic

    # Logging
    log_level: str = "INFO"
    log_file: str = "nucleiseg.log"

    # Outputs; a command without --out or paths.out_dir writes to <output_directory>/<command>
    output_directory: str = "runs"

    class Config:
        env_file = ".env"
        env_prefix = "NUCLEISEG_"
        case_sensitive = False


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig from an optional YAML file and dotted-key overrides.

    Args:
        path: YAML file; defaults apply when omitted
        overrides: mapping like {"model.family": "resunet"}; None values are skipped

    Returns:
        RunConfig: validated configuration

    Raises:
        ConfigError: unreadable file or invalid values
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"Config file not found: {config_path}")
        try:
            raw = yaml.safe_load(config_path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Could not parse {config_path}: {e}")
        logger.info(f"Loaded run config from {config_path}")

    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        _set_dotted(raw, dotted, value)

    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration:\n{e}")


def dump_run_config(config: RunConfig, path: Path) -> Path:
    """Write the fully resolved config so the run can be replayed"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False))
    return path


def render_run_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


def _set_dotted(tree: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


# Create global settings instance
settings = Settings()
