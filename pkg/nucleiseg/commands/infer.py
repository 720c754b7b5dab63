"""
`infer`: segment one subject with a trained checkpoint.
"""
from pathlib import Path
import logging

from nucleiseg.commands.common import add_common_arguments, resolve_config, write_resolved_config
from nucleiseg.exceptions import ConfigError
from nucleiseg.models import InputMode
from nucleiseg.networks.checkpoint import load_checkpoint
from nucleiseg.services.evaluation import predict_volume
from nucleiseg.services.preprocess import prepare_volumes
from nucleiseg.services.volume_io import load_volume, save_volume
from nucleiseg.utils.file_handler import strip_nifti_extension
from nucleiseg.utils.reproducibility import resolve_device
from nucleiseg.utils.visualization import save_overlays

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("infer", help="segment a subject")
    add_common_arguments(parser)
    parser.add_argument("--checkpoint", help="trained checkpoint (.pt)")
    parser.add_argument("--qsm", required=True, help="QSM volume (.nii/.nii.gz); defines the output grid")
    parser.add_argument("--t1", help="T1WI volume, required by qsm_t1 and t1_only checkpoints")
    parser.add_argument("--no-overlays", action="store_true", help="write only the label NIfTI")
    parser.set_defaults(handler=run)


def run(args) -> int:
    config = resolve_config(args, {"paths.checkpoint": args.checkpoint})
    if not config.paths.checkpoint:
        raise ConfigError("infer needs --checkpoint or paths.checkpoint in the config")
    out_dir = Path(config.paths.out_dir)
    write_resolved_config(config, out_dir)

    device = resolve_device(config.device)
    checkpoint = load_checkpoint(config.paths.checkpoint, device=str(device))
    preprocess = checkpoint.preprocess
    qsm = load_volume(args.qsm)
    t1 = load_volume(args.t1) if args.t1 and preprocess.input_mode is not InputMode.QSM_ONLY else None

    prepared = prepare_volumes(qsm, t1, None, preprocess, subject_id=Path(args.qsm).name)
    patch_shape = checkpoint.metadata.get("patch_shape", list(config.train.patch_shape))
    result = predict_volume(
        checkpoint.model, prepared.image, patch_shape, config.inference, device,
        pad_before=prepared.pad_before, original_geometry=prepared.original_geometry,
        checkpoint_id=checkpoint.checkpoint_id,
    )

    stem = strip_nifti_extension(Path(args.qsm).name)
    label_path = save_volume(result.label, out_dir / f"{stem}_label.nii.gz")
    logger.info(f"Label map written to {label_path} ({result.seconds:.2f}s, checkpoint {checkpoint.checkpoint_id})")
    if not args.no_overlays:
        save_overlays(qsm, result.label, out_dir, stem, window=preprocess.qsm_window)
    return 0
