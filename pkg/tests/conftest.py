import numpy as np
import pytest

from mriseg.phantom import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def clean_phantom():
    return generate_phantom(PhantomSpec())


@pytest.fixture(scope="session")
def noisy_phantom():
    # noise at 15% of the 50-unit inter-class gap
    return generate_phantom(PhantomSpec(noise_sigma=7.5, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split(":")[0][1:])):
            terminalreporter.write_line(line)
