"""Shared fixtures: small phantoms and a tiny architecture for fast runs."""

import pytest
from hypothesis import settings

from dipstop import ArchSpec, generate_phantom

# single-CPU box: generation time varies too much for hypothesis deadlines
settings.register_profile("ci", deadline=None, max_examples=25)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def disks8():
    return generate_phantom("disks", 8, 8, 1, 3)


@pytest.fixture(scope="session")
def disks32():
    return generate_phantom("disks", 32, 32, 1, 7)


@pytest.fixture(scope="session")
def tiny_arch():
    return ArchSpec(depth=2, channels=(8, 16), skip_channels=(4, 4))
