import numpy as np
import pytest

from cbfed_lab import rng as crng
from cbfed_lab.operators import ModelParams
from cbfed_lab.spectral import GridSpec, random_field


@pytest.fixture(scope="session")
def grid16():
    return GridSpec(2, 16)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(2, 32)


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(2, 64)


@pytest.fixture(scope="session")
def params():
    return ModelParams()


def make_field(grid, seed, kmax=None, amplitude=0.6, decay=2.0, divergence_free=True):
    gen = crng.generator(seed, 0, 0, crng.PURPOSE_FIELD)
    return random_field(grid, gen, kmax=kmax, amplitude=amplitude, decay=decay,
                        divergence_free=divergence_free)
