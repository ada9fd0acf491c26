import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mtlcap.toydata import generate_toy_dataset  # noqa: E402

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
BUNDLED_TOY = os.path.join(REPO_ROOT, "data", "toy")


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    """The bundled toy dataset if present, else a freshly generated copy."""
    if os.path.isdir(BUNDLED_TOY):
        return BUNDLED_TOY
    root = tmp_path_factory.mktemp("toy")
    generate_toy_dataset(root, seed=0)
    return str(root)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
