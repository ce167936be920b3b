import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # tests import local oracles

from ahcnn.staged_model import build_random_model


@pytest.fixture(scope="session")
def toy_model():
    return build_random_model(seed=0)
