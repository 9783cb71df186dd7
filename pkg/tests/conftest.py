import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from procsim.synth import SynthSpec, generate  # noqa: E402


@pytest.fixture(scope="session")
def tiny_synth():
    return generate(
        SynthSpec(superclass_count=2, classes_per_superclass=2, samples_per_class=10, feature_dim=8, signal_dim=4)
    )


@pytest.fixture(scope="session")
def default_synth():
    return generate(SynthSpec())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
