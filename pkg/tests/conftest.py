import math

import numpy as np
import pytest
from hypothesis import settings
from prefect.testing.utilities import prefect_test_harness

from prefect_rbf_fmm.geometry import generate_quasiuniform
from prefect_rbf_fmm.kernels import parse_kernel_spec
from prefect_rbf_fmm.utilities import generator

settings.register_profile("rbf-fmm", deadline=None, max_examples=50)
settings.load_profile("rbf-fmm")


@pytest.fixture(scope="session", autouse=True)
def prefect_db():
    with prefect_test_harness():
        yield


@pytest.fixture(autouse=True)
def reset_object_registry():
    """
    Ensures each test has a clean object registry.
    """
    from prefect.context import PrefectObjectRegistry

    with PrefectObjectRegistry():
        yield


@pytest.fixture
def imq():
    return parse_kernel_spec("imq:c=1")


@pytest.fixture
def mq():
    return parse_kernel_spec("mq:c=1")


@pytest.fixture
def gaussian():
    return parse_kernel_spec("gaussian:c=1")


@pytest.fixture
def unit_points():
    """
    256 jittered points on [0, 1]; with sigma = pi every displacement stays
    inside the period of a 64-node grid.
    """
    return generate_quasiuniform(256, (0.0, 1.0), seed=3, jitter=0.3)


@pytest.fixture
def unit_weights(unit_points):
    return generator(11).standard_normal(unit_points.n)


@pytest.fixture
def unit_square_points():
    return generate_quasiuniform(
        400, ((0.0, 0.0), (1.0, 1.0)), seed=5, jitter=0.3
    )


@pytest.fixture
def sigma():
    return math.pi
