import numpy as np
import pytest

from arborabc import (
    GrowthParams,
    GuidanceField,
    SomaSpec,
    model1_defaults,
    model2_defaults,
)


@pytest.fixture
def field_z():
    return GuidanceField(kind="constant-gradient", direction=(0.0, 0.0, 1.0))


@pytest.fixture
def soma_one():
    return SomaSpec(position=(0.0, 0.0, 0.0), radius=10.0,
                    neurites=(((0.0, 0.0, 1.0), 1.0),))


@pytest.fixture
def params1():
    return model1_defaults()


@pytest.fixture
def params2():
    return model2_defaults()


@pytest.fixture
def quick_params():
    # short runs for step-level tests
    return GrowthParams(p_bra=0.02, R=1e-3, v=100.0, dt=0.01, T=1.0)


def rng_of(seed):
    return np.random.default_rng(seed)
