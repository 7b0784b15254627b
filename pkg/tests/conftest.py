import warnings

import numpy as np
import pytest

from iceseg.cli import main as cli_main

warnings.filterwarnings("ignore", message="no chart polygons")


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A 12-scene 96x96 synthetic dataset plus prepared labels/split/patches.

    Small enough that session setup stays under a few seconds; training-grade
    data is generated separately by the acceptance suite.
    """
    root = tmp_path_factory.mktemp("tiny")
    data_dir = root / "data"
    prep_dir = root / "prep"
    assert cli_main(["synth", "--out", str(data_dir), "--size", "96", "--seed", "7",
                     "--regions", "5", "--nodata-corner", "4"]) == 0
    assert cli_main(["prepare", "--data", str(data_dir), "--out", str(prep_dir),
                     "--patch-size", "32", "--patches-per-scene", "4"]) == 0
    return data_dir, prep_dir


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
