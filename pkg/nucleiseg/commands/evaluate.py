"""
`evaluate`: Dice, ROI measurements, regression and timing over a split.
"""
import logging

from nucleiseg.commands.common import add_common_arguments, resolve_config, write_resolved_config
from nucleiseg.exceptions import ConfigError
from nucleiseg.models import Split
from nucleiseg.networks.checkpoint import load_checkpoint
from nucleiseg.services.evaluation import evaluate_split
from nucleiseg.services.volume_io import load_manifest
from nucleiseg.utils.reproducibility import resolve_device

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("evaluate", help="evaluate a checkpoint on a manifest split")
    add_common_arguments(parser)
    parser.add_argument("--checkpoint", help="trained checkpoint (.pt)")
    parser.add_argument("--manifest", help="dataset manifest.json")
    parser.add_argument("--split", choices=[s.value for s in Split], default=Split.TEST.value)
    parser.add_argument("--oracle", action="store_true", help="pass manual labels through as predictions")
    parser.add_argument("--repetitions", type=int, default=1, help="timing repetitions per volume")
    parser.set_defaults(handler=run)


def run(args) -> int:
    config = resolve_config(args, {
        "paths.checkpoint": args.checkpoint,
        "paths.manifest": args.manifest,
    })
    if not config.paths.manifest:
        raise ConfigError("evaluate needs --manifest or paths.manifest in the config")
    if not config.paths.checkpoint and not args.oracle:
        raise ConfigError("evaluate needs --checkpoint unless --oracle is set")
    out_dir = config.paths.out_dir
    write_resolved_config(config, out_dir)

    device = resolve_device(config.device)
    manifest = load_manifest(config.paths.manifest)
    checkpoint = None if args.oracle else load_checkpoint(config.paths.checkpoint, device=str(device))
    patch_shape = (
        checkpoint.metadata.get("patch_shape", list(config.train.patch_shape))
        if checkpoint is not None else config.train.patch_shape
    )
    summary = evaluate_split(
        manifest,
        Split(args.split),
        out_dir,
        checkpoint=checkpoint,
        preprocess=config.preprocess,
        inference=config.inference,
        patch_shape=patch_shape,
        device=device,
        oracle=args.oracle,
        repetitions=args.repetitions,
        scheme=config.class_scheme,
    )
    for name, value in summary.per_class_dice.items():
        logger.info(f"Dice {name}: {value:.4f}")
    if summary.inference_time:
        logger.info(f"Inference time: {summary.inference_time}")
    return 0
