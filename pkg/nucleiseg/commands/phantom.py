"""
`phantom`: write a synthetic dataset with manifest.
"""
import argparse
import logging

from nucleiseg.commands.common import add_common_arguments, resolve_config, write_resolved_config
from nucleiseg.services.phantom import generate_dataset

logger = logging.getLogger(__name__)


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {number}")
    return number


def register(subparsers) -> None:
    parser = subparsers.add_parser("phantom", help="generate a synthetic phantom dataset")
    add_common_arguments(parser)
    parser.add_argument("--subjects", type=positive_int, default=6, help="number of subjects (>= 1)")
    parser.add_argument("--split", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"),
                        help="subjects per split; defaults to about 4:1:1")
    parser.set_defaults(handler=run)


def run(args) -> int:
    config = resolve_config(args)
    out_dir = config.paths.out_dir
    write_resolved_config(config, out_dir)
    manifest = generate_dataset(args.subjects, config.phantom, config.seed, out_dir, split_counts=args.split)
    logger.info(f"Phantom dataset ready: {len(manifest.entries)} subjects in {out_dir}")
    return 0
