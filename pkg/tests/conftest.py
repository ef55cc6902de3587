import os

import numpy as np
import pytest
import torch

from thermohand.domain import GestureVocabulary
from thermohand.network import NetworkConfig
from thermohand.synth import GeneratorSpec, iter_samples

torch.set_num_threads(1)
os.environ.setdefault("OMP_NUM_THREADS", "1")

TINY = NetworkConfig(
    down_widths=(4, 4, 8, 8), up_widths=(8, 4), shared_widths=(4, 4), gesture_hidden=8,
    keypoint_widths=(4, 4, 4, 4), keypoint_up_width=4, keypoint_tail_widths=(4, 6),
    parameter_budget=None,
)

# reduced widths used for the desk-scale runs
DESK = NetworkConfig(
    down_widths=(16, 32, 64, 128), up_widths=(64, 32), shared_widths=(32, 32), gesture_hidden=64,
    keypoint_widths=(32, 32, 32, 32), keypoint_up_width=32, keypoint_tail_widths=(16, 6),
    parameter_budget=None,
)

# the full 10-epoch desk run needs roughly twice the trunk width of DESK to
# reach the handedness target; about 2 min/epoch on one CPU thread
DESK_WIDE = NetworkConfig(
    down_widths=(32, 64, 128, 256), up_widths=(128, 64), shared_widths=(64, 64), gesture_hidden=128,
    keypoint_widths=(48, 48, 48, 48), keypoint_up_width=48, keypoint_tail_widths=(24, 6),
    parameter_budget=None,
)


@pytest.fixture(scope="session")
def vocab():
    return GestureVocabulary.default()


@pytest.fixture(scope="session")
def tiny_cfg():
    return TINY


@pytest.fixture(scope="session")
def small_set():
    """Two users, one sample per gesture and hand: 40 samples, user 2 is test."""
    spec = GeneratorSpec(seed=3, users=2, samples_per_gesture_per_hand=1, test_users=1)
    return [s for _, _, _, s in iter_samples(spec)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
