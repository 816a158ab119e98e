import os
import sys
from pathlib import Path

# tiny-matrix workload: multithreaded BLAS only adds sync overhead
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

sys.path.insert(0, str(Path(__file__).resolve().parent))

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = REPO_ROOT / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def breast_csv():
    path = DATA_DIR / "breast.csv"
    if not path.exists():
        pytest.skip("data/breast.csv missing; run scripts/build_datasets.py")
    return path


@pytest.fixture(scope="session")
def wine_csv():
    path = DATA_DIR / "wine.csv"
    if not path.exists():
        pytest.skip("data/wine.csv missing; run scripts/build_datasets.py")
    return path
