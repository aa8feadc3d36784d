import numpy as np
import pytest
from hypothesis import settings

from terrasynth import fixtures
from terrasynth.render import SceneBundle

# first calls into jitted kernels compile; wall-clock deadlines would flake
settings.register_profile("repo", deadline=None)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def flat_scene():
    return SceneBundle.build(fixtures.flat(33, 1.0, 0.0), constant_albedo=0.5)


@pytest.fixture(scope="session")
def hills_field():
    return fixtures.hills(65, 1.0, seed=11)


@pytest.fixture(scope="session")
def hills_scene(hills_field):
    return SceneBundle.build(hills_field, fixtures.texture_for(hills_field, 2))


@pytest.fixture(scope="session")
def step_scene():
    return SceneBundle.build(fixtures.step(321, 0.125, 10.0), constant_albedo=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Report one criterion: prints a PASS/FAIL line and keeps it for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(number: int, name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
