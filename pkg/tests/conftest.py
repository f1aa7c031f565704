import numpy as np
import pytest

from gluplap.datamodel import EndmemberLibrary, HyperCube


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


def random_cube(rng, bands=8, rows=3, cols=4, scale=1.0):
    data = scale * rng.random((bands, rows * cols))
    return HyperCube(data=data, rows=rows, cols=cols)


def random_library(rng, bands=8, m=3):
    # well-conditioned columns so exact-fit arguments hold
    base = rng.random((bands, m)) + 0.05
    base += 0.5 * np.eye(bands, m)
    return EndmemberLibrary(spectra=base)
