import os
import shutil

import pytest

TINY = [
    "model.widths=4,6",
    "data.patch_size=16",
    "data.train_count=16",
    "data.eval_count=4",
    "train.batch_size=8",
    "train.epochs_stage1=1",
    "train.epochs_per_decoder=1",
    "train.iterative_cycles=2",
    "train.simultaneous_epochs=1",
]


@pytest.fixture
def tiny():
    return list(TINY)


@pytest.fixture
def cli():
    path = os.environ.get("DJSCC_CLI") or shutil.which("djscc")
    if not path:
        pytest.skip("djscc executable not available")
    return path
