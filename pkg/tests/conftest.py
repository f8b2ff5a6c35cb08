import os
from pathlib import Path

import numpy as np
import pytest

from mtd2nn.field import PropagationSpec

DATA_DIR = Path(os.environ.get("MTD2NN_DATA", Path(__file__).resolve().parents[1] / "data"))
if not (DATA_DIR / "mnist").exists() and Path("/root/data/mnist").exists():
    DATA_DIR = Path("/root/data")


def random_field(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_spec():
    return PropagationSpec(grid_rows=16, grid_cols=16)


def idx_paths(name, split):
    pre = "train" if split == "train" else "t10k"
    return (DATA_DIR / name / f"{pre}-images-idx3-ubyte.gz",
            DATA_DIR / name / f"{pre}-labels-idx1-ubyte.gz")


def have_data():
    return all(p.exists() for n in ("mnist", "fashion") for s in ("train", "test")
               for p in idx_paths(n, s))


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail=""):
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
