import numpy as np
import pytest

from sbcpn.experiments import gen_students_t, students_t_problem


@pytest.fixture(scope="session")
def desk_instance():
    """Student's t desk instance: n = 512, m = 1024, seed 0."""
    return gen_students_t(512, 0)


@pytest.fixture(scope="session")
def desk_problem(desk_instance):
    return students_t_problem(desk_instance)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
