"""
Training: weighted cross-entropy objective, plateau learning-rate schedule
and the optimization loop.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from nucleiseg.config import settings
from nucleiseg.exceptions import DivergenceError, LabelRangeError, TrainingError
from nucleiseg.models import Split
from nucleiseg.networks import build
from nucleiseg.networks.checkpoint import save_checkpoint
from nucleiseg.schemas import DatasetManifest, EpochRecord, LossConfig, RunConfig, TrainConfig
from nucleiseg.services.patching import PatchPair, augment, center_pair, sample_training_pair
from nucleiseg.services.preprocess import PreparedSubject, prepare_subject
from nucleiseg.utils.file_handler import ensure_directory
from nucleiseg.utils.reproducibility import seed_everything, sub_seed

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "best.pt"
METRICS_NAME = "metrics.csv"


# ==================== Loss ====================

def weighted_ce(logits: torch.Tensor, labels: torch.Tensor, weights) -> torch.Tensor:
    """
    Class-weighted cross-entropy, normalized by the sum of applied weights.

    Args:
        logits: (N, numClasses, *spatial)
        labels: (N, *spatial) integer class indices
        weights: one positive weight per class

    Raises:
        LabelRangeError: label outside [0, numClasses)
        DivergenceError: non-finite logits
    """
    num_classes = logits.shape[1]
    if tuple(labels.shape) != (logits.shape[0],) + tuple(logits.shape[2:]):
        raise TrainingError(f"Label shape {tuple(labels.shape)} does not match logits {tuple(logits.shape)}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelRangeError(
            f"Labels must lie in [0, {num_classes}), found [{int(labels.min())}, {int(labels.max())}]"
        )
    if not torch.isfinite(logits).all():
        raise DivergenceError("Logits contain non-finite values")
    weight = torch.as_tensor(weights, dtype=logits.dtype, device=logits.device)
    return F.cross_entropy(logits, labels.long(), weight=weight)


def combined_loss(main_logits: torch.Tensor, aux_logits: Optional[torch.Tensor], local_label: torch.Tensor,
                  global_label: Optional[torch.Tensor], cfg: LossConfig):
    """
    L = L_p + lambda_g * L_g; L_g is None for single-branch networks.

    Returns:
        (L, L_p, L_g)
    """
    loss_p = weighted_ce(main_logits, local_label, cfg.class_weights)
    if aux_logits is None:
        return loss_p, loss_p, None
    if global_label is None:
        raise TrainingError("Auxiliary logits given without global labels")
    if tuple(aux_logits.shape[2:]) != tuple(global_label.shape[1:]):
        raise TrainingError(
            f"Auxiliary grid {tuple(aux_logits.shape[2:])} differs from global label grid {tuple(global_label.shape[1:])}"
        )
    loss_g = weighted_ce(aux_logits, global_label, cfg.class_weights)
    if cfg.lambda_g == 0:
        return loss_p, loss_p, loss_g.detach()
    return loss_p + cfg.lambda_g * loss_g, loss_p, loss_g


# ==================== Schedule ====================

@dataclass(frozen=True)
class TrainState:
    """Plateau schedule state; advanced only through lr_step"""
    initial_lr: float = 3e-4
    lr: float = 3e-4
    factor: float = math.sqrt(0.1)
    patience: int = 10
    threshold: float = 1e-6
    min_lr: float = 1e-6
    epoch: int = 0
    best_val_loss: float = math.inf
    plateau_count: int = 0
    reductions: int = 0
    terminated: bool = False
    seed: int = 0

    @classmethod
    def from_config(cls, cfg: TrainConfig, seed: int = 0) -> "TrainState":
        return cls(
            initial_lr=cfg.learning_rate,
            lr=cfg.learning_rate,
            factor=cfg.lr_factor,
            patience=cfg.patience,
            threshold=cfg.improvement_threshold,
            min_lr=cfg.min_lr,
            seed=seed,
        )


def lr_step(state: TrainState, val_loss: float) -> TrainState:
    """
    Advance the schedule by one epoch.

    An epoch improves when val_loss < best - threshold. After `patience`
    epochs without improvement the rate is reduced by `factor`; training
    terminates once the rate falls below min_lr.
    """
    epoch = state.epoch + 1
    if val_loss < state.best_val_loss - state.threshold:
        return replace(state, epoch=epoch, best_val_loss=float(val_loss), plateau_count=0)

    count = state.plateau_count + 1
    if count < state.patience:
        return replace(state, epoch=epoch, plateau_count=count)

    reductions = state.reductions + 1
    lr = state.initial_lr * state.factor ** reductions
    return replace(
        state,
        epoch=epoch,
        plateau_count=0,
        reductions=reductions,
        lr=lr,
        terminated=lr < state.min_lr,
    )


# ==================== Data ====================

def pair_to_sample(pair: PatchPair) -> Dict[str, torch.Tensor]:
    return {
        "local": torch.from_numpy(pair.local),
        "global_": torch.from_numpy(pair.global_),
        "local_label": torch.from_numpy(pair.local_label),
        "global_label": torch.from_numpy(pair.global_label),
    }


class PatchDataset(Dataset):
    """
    Augmented training patch pairs for one epoch.

    Item i of epoch e draws from subject i % n with a seed derived from
    (seed, e, i), so samples do not depend on worker scheduling.
    """

    def __init__(self, subjects: Sequence[PreparedSubject], rate: int, cfg: TrainConfig, seed: int):
        if not subjects:
            raise TrainingError("No training subjects")
        self.subjects = list(subjects)
        self.rate = rate
        self.cfg = cfg
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return self.cfg.patches_per_subject * len(self.subjects)

    def __getitem__(self, index: int) -> Dict[str, torch.Tensor]:
        subject = self.subjects[index % len(self.subjects)]
        augment_seed, sample_seed = sub_seed(self.seed, self.epoch, index).spawn(2)
        image, label = augment(subject.image, subject.label, self.cfg.augment, augment_seed)
        pair = sample_training_pair(
            image, label, self.rate, sample_seed,
            fg_bias=self.cfg.fg_bias, patch_shape=self.cfg.patch_shape, jitter=self.cfg.jitter,
        )
        return pair_to_sample(pair)


# ==================== Optimization ====================

def make_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=tuple(cfg.betas), weight_decay=cfg.weight_decay
    )


def batch_loss(model: nn.Module, batch: Dict[str, torch.Tensor], loss_cfg: LossConfig, device) -> Tuple:
    """Forward one batch and return (L, L_p, L_g)"""
    local = batch["local"].to(device)
    global_ = batch["global_"].to(device) if model.spec.uses_global_branch else None
    output = model(local, global_)
    global_label = batch["global_label"].to(device) if output.aux is not None else None
    return combined_loss(output.main, output.aux, batch["local_label"].to(device), global_label, loss_cfg)


def train_step(model: nn.Module, optimizer: torch.optim.Optimizer, batch: Dict[str, torch.Tensor],
               loss_cfg: LossConfig, device="cpu") -> Tuple[float, float, Optional[float]]:
    """One optimizer update; returns the detached losses"""
    model.train()
    optimizer.zero_grad()
    loss, loss_p, loss_g = batch_loss(model, batch, loss_cfg, device)
    if not torch.isfinite(loss):
        raise DivergenceError(f"Training loss became non-finite ({loss.item()})")
    loss.backward()
    optimizer.step()
    return loss.item(), loss_p.item(), None if loss_g is None else loss_g.item()


@torch.no_grad()
def validation_loss(model: nn.Module, samples: List[Dict[str, torch.Tensor]], loss_cfg: LossConfig,
                    batch_size: int, device="cpu") -> float:
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        batch = {key: torch.stack([s[key] for s in chunk]) for key in chunk[0]}
        loss, _, _ = batch_loss(model, batch, loss_cfg, device)
        if not torch.isfinite(loss):
            raise DivergenceError(f"Validation loss became non-finite ({loss.item()})")
        total += loss.item() * len(chunk)
        count += len(chunk)
    return total / count


@dataclass
class TrainResult:
    checkpoint_path: Path
    checkpoint_id: str
    metrics_path: Path
    history: List[EpochRecord] = field(default_factory=list)
    final_state: Optional[TrainState] = None


def train_subjects(train_set: Sequence[PreparedSubject], val_set: Sequence[PreparedSubject],
                   config: RunConfig, out_dir, device="cpu", max_epochs: Optional[int] = None) -> TrainResult:
    """
    Optimize a fresh network on prepared subjects.

    Writes the best-validation checkpoint and the per-epoch metric CSV into
    out_dir. Validation uses one centred patch pair per validation subject.

    Raises:
        TrainingError: no training subjects
        DivergenceError: non-finite loss
    """
    if not train_set:
        raise TrainingError("Training split is empty")
    if not val_set:
        logger.warning("Validation split is empty; validating on the training subjects")
        val_set = train_set

    out_dir = ensure_directory(out_dir)
    cfg = config.train
    spec = config.model
    seed_everything(config.seed)
    model = build(spec).to(device)
    optimizer = make_optimizer(model, cfg)
    state = TrainState.from_config(cfg, seed=config.seed)

    dataset = PatchDataset(train_set, spec.rate, cfg, config.seed)
    workers = cfg.num_workers if cfg.num_workers is not None else settings.num_workers
    val_samples = [
        pair_to_sample(center_pair(s.image, s.label, spec.rate, cfg.patch_shape)) for s in val_set
    ]

    checkpoint_path = out_dir / CHECKPOINT_NAME
    metrics_path = out_dir / METRICS_NAME
    checkpoint_id = ""
    history: List[EpochRecord] = []
    epochs = max_epochs or cfg.max_epochs
    logger.info(
        f"Training {spec.family.value} on {len(train_set)} subjects "
        f"({len(dataset)} patches/epoch, batch {cfg.batch_size}, workers {workers}) for up to {epochs} epochs"
    )

    for epoch in range(1, epochs + 1):
        dataset.set_epoch(epoch)
        loader = DataLoader(
            dataset,
            batch_size=cfg.batch_size,
            shuffle=True,
            num_workers=workers,
            generator=torch.Generator().manual_seed(config.seed * 100003 + epoch),
        )
        sums = np.zeros(3)
        seen = 0
        has_global = False
        for batch in tqdm(loader, desc=f"epoch {epoch}", leave=False, disable=None):
            n = batch["local"].shape[0]
            loss, loss_p, loss_g = train_step(model, optimizer, batch, config.loss, device)
            has_global = loss_g is not None
            sums += np.array([loss, loss_p, loss_g or 0.0]) * n
            seen += n
        means = sums / seen

        val_loss = validation_loss(model, val_samples, config.loss, cfg.batch_size, device)
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(means[0]),
            val_loss=val_loss,
            loss_p=float(means[1]),
            loss_g=float(means[2]) if has_global else None,
            lr=state.lr,
        )
        history.append(record)
        pd.DataFrame([r.model_dump(by_alias=True) for r in history]).to_csv(metrics_path, index=False)

        previous_best = state.best_val_loss
        state = lr_step(state, val_loss)
        if state.best_val_loss < previous_best:
            checkpoint_id = save_checkpoint(
                checkpoint_path, model, spec, config.class_scheme, config.preprocess,
                metadata={
                    "epoch": epoch,
                    "best_val_loss": val_loss,
                    "lr": record.lr,
                    "seed": config.seed,
                    "patch_shape": list(cfg.patch_shape),
                },
            )
        logger.info(
            f"Epoch {epoch}: train {record.train_loss:.4f} val {val_loss:.4f} lr {record.lr:.3e}"
            f"{' (best)' if state.best_val_loss < previous_best else ''}"
        )

        for group in optimizer.param_groups:
            group["lr"] = state.lr
        if state.terminated:
            logger.info(f"Learning rate {state.lr:.3e} fell below {cfg.min_lr:.0e}; stopping after epoch {epoch}")
            break

    return TrainResult(
        checkpoint_path=checkpoint_path,
        checkpoint_id=checkpoint_id,
        metrics_path=metrics_path,
        history=history,
        final_state=state,
    )


def train(manifest: DatasetManifest, config: RunConfig, out_dir, device="cpu",
          max_epochs: Optional[int] = None) -> TrainResult:
    """Load the train and val splits of a manifest and run train_subjects"""
    scheme = config.class_scheme
    train_entries = manifest.entries_for(Split.TRAIN)
    if not train_entries:
        raise TrainingError("Manifest has no training subjects")
    for entry in train_entries + manifest.entries_for(Split.VAL):
        if entry.label is None:
            raise TrainingError(f"Subject {entry.id} has no label volume")

    train_set = [prepare_subject(e, manifest, config.preprocess, scheme.num_classes) for e in train_entries]
    val_set = [
        prepare_subject(e, manifest, config.preprocess, scheme.num_classes)
        for e in manifest.entries_for(Split.VAL)
    ]
    return train_subjects(train_set, val_set, config, out_dir, device=device, max_epochs=max_epochs)
