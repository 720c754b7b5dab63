"""
Command-line entry point.
"""
from typing import List, Optional
import argparse
import logging
import sys

from nucleiseg.config import settings
from nucleiseg.commands import evaluate, infer, phantom, train
from nucleiseg.exceptions import NucleiSegError


def configure_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(settings.log_file),
            logging.StreamHandler()
        ]
    )


logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nucleiseg",
        description="Gray-matter nuclei segmentation from QSM and T1WI: "
                    "phantom data, training, inference and evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.version}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in (phantom, train, infer, evaluate):
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and run one subcommand.

    Returns:
        int: 0 when every output was written, otherwise the error's exit code
    """
    args = build_parser().parse_args(argv)
    configure_logging()
    logger.info(f"[STARTUP] {settings.app_name} v{settings.version}: {args.command}")
    try:
        code = args.handler(args)
    except NucleiSegError as exc:
        logger.error(f"{type(exc).__name__}: {exc.detail}")
        return exc.exit_code
    except Exception as exc:
        logger.error(f"Unhandled exception: {str(exc)}", exc_info=True)
        return 1
    logger.info(f"[SHUTDOWN] {args.command} finished")
    return code


if __name__ == "__main__":
    sys.exit(main())
