"""
Shared fixtures
"""
import numpy as np
import pytest

from imaging.containers import Image2D
from phantom.generator import PhantomSpec, generate
from tests.helpers import smooth_image


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def blob_image() -> Image2D:
    return Image2D(data=smooth_image())


@pytest.fixture
def other_blob_image() -> Image2D:
    return Image2D(data=smooth_image(seed=7))


@pytest.fixture(scope="session")
def small_phantom_spec() -> PhantomSpec:
    return PhantomSpec(height=64, width=64, frames=5, inversion_times=[100.0, 300.0, 700.0, 1500.0, 3000.0],
                       ring_radii=(8.0, 14.0), motion_amplitude=2.0, seed=3)


@pytest.fixture(scope="session")
def small_phantom(small_phantom_spec):
    return generate(small_phantom_spec)
