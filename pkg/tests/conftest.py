import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from xmkd.dataio import SyntheticSceneSpec, generate_dataset  # noqa: E402
from xmkd.geometry import CalibrationSet, PointCloudFrame  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture
def simple_calib():
    P = np.array([[100.0, 0, 50, 0], [0, 100.0, 50, 0], [0, 0, 1, 0]])
    Tr = np.concatenate([np.eye(3), np.zeros((3, 1))], axis=1)
    return CalibrationSet(P, Tr, 100, 100)


def random_cloud(rng, n, K=5, scale=10.0):
    pos = rng.uniform(-scale, scale, size=(n, 3))
    return PointCloudFrame(pos, rng.uniform(0, 1, n), rng.integers(0, K, n))


TINY_SPEC = dict(num_points=512, num_train=4, num_val=2, image_size=(32, 96), lidar_azimuth_steps=240,
                 lidar_beams=16)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    generate_dataset(SyntheticSceneSpec(**TINY_SPEC), 3, root)
    return root


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
