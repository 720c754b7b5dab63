"""
Shared fixtures: a tiny phantom layout, tiny run configs and a generated dataset.
Slow training-based checks run only with --runslow.
"""
import pytest

from nucleiseg.schemas import NucleusSpec, PhantomSpec, RunConfig
from nucleiseg.services.phantom import generate_dataset

TINY_SHAPE = (16, 48, 64)
TINY_PATCH = (16, 32, 32)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: training-based acceptance checks (need --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def tiny_nuclei():
    layout = {
        "CN": ((6, -30, 12), (4, 8, 5), 60, 620),
        "GP": ((0, -10, 14), (4, 5, 4), 170, 660),
        "PUT": ((0, -12, 30), (5, 10, 5), 70, 600),
        "THA": ((0, 14, 10), (6, 10, 6), 25, 560),
        "SN": ((-8, 12, 30), (3, 4, 4), 140, 505),
        "RN": ((-8, 30, 10), (3, 4, 4), 110, 500),
        "DN": ((8, 34, 40), (4, 4, 4), 115, 495),
    }
    return [
        NucleusSpec(
            name=name,
            center_mm=center,
            semi_axes_mm=axes,
            qsm_mean=qsm,
            qsm_std=10.0,
            t1_mean=t1,
            t1_std=20.0,
            small=name in ("SN", "RN", "DN"),
        )
        for name, (center, axes, qsm, t1) in layout.items()
    ]


def make_tiny_spec(**updates) -> PhantomSpec:
    values = dict(
        shape=TINY_SHAPE,
        spacing=(2.0, 2.0, 2.0),
        nuclei=tiny_nuclei(),
        center_jitter_mm=1.0,
        axis_jitter=0.05,
        small_fraction_limit=None,  # tiny small nuclei are deliberately coarse
    )
    values.update(updates)
    return PhantomSpec(**values)


def make_tiny_config(family="db_resunet", rate=2, input_mode="qsm_t1", base_width=4, levels=4,
                     epochs=2, seed=0) -> RunConfig:
    return RunConfig.model_validate({
        "seed": seed,
        "preprocess": {"target_shape": list(TINY_SHAPE), "input_mode": input_mode},
        "model": {"family": family, "rate": rate, "base_width": base_width, "levels": levels},
        "train": {
            "max_epochs": epochs,
            "batch_size": 2,
            "patches_per_subject": 2,
            "patch_shape": list(TINY_PATCH),
            "jitter": 4,
            "num_workers": 0,
        },
        "inference": {"stride_inplane": [16, 16], "batch_size": 4},
        "phantom": make_tiny_spec().model_dump(),
    })


@pytest.fixture
def tiny_spec():
    return make_tiny_spec()


@pytest.fixture
def tiny_config():
    return make_tiny_config()


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Three jittered tiny phantoms split 1/1/1"""
    root = tmp_path_factory.mktemp("tiny_phantom")
    manifest = generate_dataset(3, make_tiny_spec(), seed=11, out_dir=root)
    return root, manifest
