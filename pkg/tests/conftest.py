import os

import numpy as np
import pytest

from gftree.model import reference_model


@pytest.fixture(scope="session")
def workers() -> int:
    return min(8, os.cpu_count() or 1)


@pytest.fixture(scope="session")
def dirac_spec():
    return reference_model("dirac")


@pytest.fixture(scope="session")
def variability_spec():
    return reference_model("uniform_increment")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
