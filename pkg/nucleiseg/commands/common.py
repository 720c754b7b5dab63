"""
Arguments and config resolution shared by every subcommand.
"""
from argparse import ArgumentParser
from pathlib import Path
from typing import Any, Dict, Optional
import logging

from nucleiseg.config import dump_run_config, load_run_config, render_run_config, settings
from nucleiseg.schemas import RunConfig
from nucleiseg.utils.file_handler import ensure_directory

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = "resolved_config.yaml"


def add_common_arguments(parser: ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run configuration; flags override its values")
    parser.add_argument("--seed", type=int, help="random seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--device", help="compute device, e.g. cpu or cuda:0")


def resolve_config(args, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load --config, apply the common flags plus command-specific overrides.
    Without an output directory the run goes to <settings.output_directory>/<command>.
    """
    merged = {
        "seed": args.seed,
        "paths.out_dir": args.out,
        "device": args.device,
    }
    merged.update(overrides or {})
    config = load_run_config(args.config, merged)
    if config.paths.out_dir is None:
        config.paths.out_dir = str(Path(settings.output_directory) / args.command)
    return config


def write_resolved_config(config: RunConfig, out_dir) -> Path:
    """Echo the resolved config and snapshot it next to the outputs"""
    logger.info(f"Resolved configuration:\n{render_run_config(config)}")
    path = dump_run_config(config, ensure_directory(out_dir) / RESOLVED_CONFIG_NAME)
    logger.info(f"Configuration snapshot written to {path}")
    return path
