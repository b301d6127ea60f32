import numpy as np
import pytest

from headsynth.headmodel import RigSpec, procedural_rig


@pytest.fixture(scope="session")
def rig():
    return procedural_rig(seed=0)


@pytest.fixture(scope="session")
def small_rig():
    # coarser tessellation keeps closest-point and grid tests fast
    return procedural_rig(RigSpec(head_lat=12, head_lon=16, eye_lat=5, eye_lon=6), seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
