import pytest

from pgmlab.grain_models import GrainSpec


@pytest.fixture(scope="session")
def ref():
    """Unit segments, the reference family of the test-suite."""
    return GrainSpec.fixed_interval(1.0)
