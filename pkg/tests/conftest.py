from __future__ import annotations

import numpy as np
import pytest

from flatscan.decomposition import StoppingParams, run_pipeline
from flatscan.generators import GeneratorSpec, generate, perturbed_plane


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def perturbed_measure():
    return perturbed_plane(atoms=4096, height=0.01)


@pytest.fixture(scope="session")
def perturbed_run(perturbed_measure):
    return run_pipeline(perturbed_measure, StoppingParams(), n=1)


@pytest.fixture(scope="session")
def flat_measure():
    return generate(GeneratorSpec("flat_plane", {"n": 1, "d": 2}, atoms=4096))


@pytest.fixture(scope="session")
def flat_run(flat_measure):
    return run_pipeline(flat_measure, StoppingParams(), n=1)
