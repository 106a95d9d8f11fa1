import numpy as np
import pytest

from sportmotion.action_parse import diving_schema
from sportmotion.kinematics import default_skeleton
from sportmotion.synth import SynthConfig, generate, two_cluster_schema


@pytest.fixture(scope="session")
def skel():
    return default_skeleton()


@pytest.fixture(scope="session")
def schema():
    return diving_schema()


@pytest.fixture(scope="session")
def diving_small(skel, schema):
    """A dozen diving clips with fitted spaces and ground-truth states."""
    return generate(schema, skel, config=SynthConfig(n_clips=12, seed=11))


@pytest.fixture(scope="session")
def toy_small(skel):
    return generate(two_cluster_schema(), skel, config=SynthConfig(n_clips=6, seed=4, frames=(30, 40)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
