import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_bundle():
    """Low-resolution orbit dataset shared by training and CLI tests."""
    from thermalfield.synthetic import make_fixture

    return make_fixture(views=8, res=16, test_views=2, samples=256)


ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def acceptance_report():
    """Record the one-line verdict of an acceptance criterion and echo it."""

    def record(key: str, passed: bool, detail: str, note: str = ""):
        line = f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}{'  ' + note if note else ''}"
        ACCEPTANCE_LINES[key] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.rstrip("ab")), k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
