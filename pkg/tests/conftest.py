import sys

import numpy as np
import pytest

from irisloc.synth import CorruptionSpec, SynthSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def clean_case():
    spec = SynthSpec(200, 200, (100.0, 100.0), 20.0, 45.0, texture_seed=3, corruption=CorruptionSpec.clean())
    return generate(spec)


@pytest.fixture(scope="session")
def noisy_case():
    spec = SynthSpec(200, 200, (100.0, 100.0), 20.0, 45.0, texture_seed=4)
    return generate(spec)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT_LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
