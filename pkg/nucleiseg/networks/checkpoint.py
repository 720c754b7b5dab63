"""
Self-describing checkpoint container.

A checkpoint holds the model spec, class scheme, preprocessing config,
parameter tensors and training metadata, so it alone determines inference.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Union
import logging

import torch
import torch.nn as nn
from pydantic import ValidationError

from nucleiseg.exceptions import VolumeError
from nucleiseg.models import ClassScheme
from nucleiseg.networks import build
from nucleiseg.schemas import ModelSpec, PreprocessConfig
from nucleiseg.utils.file_handler import ensure_directory, file_digest

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: nn.Module
    model_spec: ModelSpec
    class_scheme: ClassScheme
    preprocess: PreprocessConfig
    metadata: Dict[str, Any] = field(default_factory=dict)
    checkpoint_id: str = ""


def save_checkpoint(path: Union[str, Path], model: nn.Module, model_spec: ModelSpec,
                    class_scheme: ClassScheme, preprocess: PreprocessConfig,
                    metadata: Dict[str, Any] = None) -> str:
    """
    Write a checkpoint and return its id (SHA-256 prefix of the file).
    """
    path = Path(path)
    ensure_directory(path.parent)
    payload = {
        "format_version": FORMAT_VERSION,
        "model_spec": model_spec.model_dump(mode="json"),
        "class_scheme": class_scheme.model_dump(mode="json"),
        "preprocess": preprocess.model_dump(mode="json"),
        "metadata": dict(metadata or {}),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
    }
    torch.save(payload, path)
    checkpoint_id = file_digest(path)
    logger.info(f"Checkpoint {checkpoint_id} written to {path}")
    return checkpoint_id


def load_checkpoint(path: Union[str, Path], device: str = "cpu") -> Checkpoint:
    """
    Rebuild the model from a checkpoint file, in evaluation mode.

    Raises:
        VolumeError: missing or unreadable checkpoint
    """
    path = Path(path)
    if not path.exists():
        raise VolumeError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location=device, weights_only=True)
    except Exception as e:
        raise VolumeError(f"Could not read checkpoint {path}: {e}")
    if payload.get("format_version") != FORMAT_VERSION:
        raise VolumeError(f"Unsupported checkpoint format {payload.get('format_version')!r} in {path}")

    try:
        spec = ModelSpec.model_validate(payload["model_spec"])
        scheme = ClassScheme.model_validate(payload["class_scheme"])
        preprocess = PreprocessConfig.model_validate(payload["preprocess"])
    except (KeyError, ValidationError) as e:
        raise VolumeError(f"Checkpoint {path} is missing or has invalid fields: {e}")

    model = build(spec)
    model.load_state_dict(payload["state_dict"])
    model.to(device)
    model.eval()
    checkpoint_id = file_digest(path)
    logger.info(f"Loaded checkpoint {checkpoint_id} ({spec.family.value}) from {path}")
    return Checkpoint(
        model=model,
        model_spec=spec,
        class_scheme=scheme,
        preprocess=preprocess,
        metadata=payload.get("metadata", {}),
        checkpoint_id=checkpoint_id,
    )
