import os

import jax
import pytest
from hypothesis import HealthCheck, settings

# Kernels are specialised per model family and dimension; caching compiled
# executables across test processes keeps repeated runs fast.
jax.config.update("jax_compilation_cache_dir", os.environ.get("RFENT_JAX_CACHE", "/tmp/rfent-jax-cache"))
jax.config.update("jax_persistent_cache_min_compile_time_secs", 0.5)

settings.register_profile(
    "numeric", deadline=None, max_examples=12, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("numeric")

from rfent.geometry.models import ManifoldModel  # noqa: E402


@pytest.fixture(scope="session")
def flat2():
    return ManifoldModel.flat(2)


@pytest.fixture(scope="session")
def flat3():
    return ManifoldModel.flat(3)


@pytest.fixture(scope="session")
def hyp2():
    return ManifoldModel.hyperbolic(2)


@pytest.fixture(scope="session")
def hyp3():
    return ManifoldModel.hyperbolic(3)


@pytest.fixture(scope="session")
def sphere2():
    return ManifoldModel.sphere(2)


@pytest.fixture(scope="session")
def cigar():
    return ManifoldModel.cigar()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
