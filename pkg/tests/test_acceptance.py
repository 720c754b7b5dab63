"""
Phantom training checks at the half-plane grid.
These train real networks for tens of epochs; run with: pytest --runslow tests/test_acceptance.py
"""
from pathlib import Path

import numpy as np
import pytest

from nucleiseg.config import load_run_config
from nucleiseg.models import Split
from nucleiseg.networks.checkpoint import load_checkpoint
from nucleiseg.services.evaluation import evaluate_split
from nucleiseg.services.phantom import generate_dataset
from nucleiseg.services.training import train

PHANTOM_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "phantom.yaml"
SMALL_NUCLEI = ("SN", "RN", "DN")

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def phantom_set(tmp_path_factory):
    """Four training and two held-out phantom subjects"""
    root = tmp_path_factory.mktemp("phantom")
    config = load_run_config(str(PHANTOM_CONFIG))
    manifest = generate_dataset(6, config.phantom, seed=config.seed, out_dir=root, split_counts=(4, 0, 2))
    return root, manifest


def _train_and_score(manifest, out_dir, splits=(Split.TEST,), **overrides):
    config = load_run_config(str(PHANTOM_CONFIG), overrides)
    result = train(manifest, config, out_dir / "run")
    checkpoint = load_checkpoint(result.checkpoint_path)
    scores = {}
    for split in splits:
        summary = evaluate_split(
            manifest, split, out_dir / f"eval_{split.value}", checkpoint=checkpoint,
            inference=config.inference, patch_shape=checkpoint.metadata["patch_shape"],
        )
        scores[split] = summary
    return scores


def test_db_resunet_fits_phantoms(phantom_set, tmp_path):
    """Test training-set Dice >= 0.80 and held-out Dice >= 0.60"""
    _, manifest = phantom_set
    scores = _train_and_score(manifest, tmp_path, splits=(Split.TRAIN, Split.TEST))
    assert scores[Split.TRAIN].mean_foreground_dice >= 0.80
    assert scores[Split.TEST].mean_foreground_dice >= 0.60


def test_rate_two_beats_rate_four_on_small_nuclei(phantom_set, tmp_path):
    """Test the coarser global branch loses at least 0.05 Dice on SN, RN and DN"""
    _, manifest = phantom_set
    small = {}
    for rate in (2, 4):
        summary = _train_and_score(manifest, tmp_path / f"rate{rate}", **{"model.rate": rate})[Split.TEST]
        small[rate] = np.mean([summary.per_class_dice[name] for name in SMALL_NUCLEI])
    assert small[2] - small[4] >= 0.05


def test_dual_modality_input_ranks_first(phantom_set, tmp_path):
    """Test qsm_t1 >= qsm_only >= t1_only on held-out phantoms"""
    _, manifest = phantom_set
    dice = {}
    for mode in ("qsm_t1", "qsm_only", "t1_only"):
        summary = _train_and_score(manifest, tmp_path / mode, **{"preprocess.input_mode": mode})[Split.TEST]
        dice[mode] = summary.mean_foreground_dice
    assert dice["qsm_t1"] >= dice["qsm_only"] >= dice["t1_only"]


if __name__ == "__main__":
    pytest.main([__file__, "-v", "--runslow"])
