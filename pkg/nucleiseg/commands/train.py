"""
`train`: fit a network on the train split and keep the best checkpoint.
"""
import logging

from nucleiseg.commands.common import add_common_arguments, resolve_config, write_resolved_config
from nucleiseg.exceptions import ConfigError
from nucleiseg.models import Family, InputMode
from nucleiseg.schemas import SUPPORTED_RATES
from nucleiseg.services.training import train
from nucleiseg.services.volume_io import load_manifest
from nucleiseg.utils.reproducibility import resolve_device

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train a segmentation network")
    add_common_arguments(parser)
    parser.add_argument("--manifest", help="dataset manifest.json")
    parser.add_argument("--family", choices=[f.value for f in Family])
    parser.add_argument("--rate", type=int, choices=SUPPORTED_RATES, help="global branch downsampling rate")
    parser.add_argument("--input-mode", choices=[m.value for m in InputMode])
    parser.add_argument("--epochs", type=int, help="maximum number of epochs")
    parser.set_defaults(handler=run)


def run(args) -> int:
    config = resolve_config(args, {
        "paths.manifest": args.manifest,
        "model.family": args.family,
        "model.rate": args.rate,
        "preprocess.input_mode": args.input_mode,
        "train.max_epochs": args.epochs,
    })
    if not config.paths.manifest:
        raise ConfigError("train needs --manifest or paths.manifest in the config")
    out_dir = config.paths.out_dir
    write_resolved_config(config, out_dir)

    device = resolve_device(config.device)
    manifest = load_manifest(config.paths.manifest)
    result = train(manifest, config, out_dir, device=device)
    logger.info(
        f"Training finished after {len(result.history)} epochs; "
        f"best checkpoint {result.checkpoint_id} at {result.checkpoint_path}"
    )
    return 0
