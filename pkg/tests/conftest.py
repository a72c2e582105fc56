import numpy as np
import pytest

from gwshm.dispersion import default_material
from gwshm.synth import DamageKind, DamageSpec, Synthesizer, default_layout


@pytest.fixture(scope="session")
def layout():
    return default_layout()


@pytest.fixture(scope="session")
def material():
    return default_material()


@pytest.fixture(scope="session")
def synth(layout, material):
    return Synthesizer(layout, material)


@pytest.fixture(scope="session")
def healthy(layout):
    return DamageSpec.default(DamageKind.NONE, layout.damage_position)


@pytest.fixture(scope="session")
def notch(layout):
    return DamageSpec.default(DamageKind.NOTCH, layout.damage_position)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
