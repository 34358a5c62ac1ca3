import numpy as np
import pytest

from ldni import shapes
from ldni.mesh import GridSpec


def unit_grid(w):
    return GridSpec((0.0, 0.0, 0.0), 1.0, w)


@pytest.fixture
def box_mesh():
    return shapes.box((0.25, 0.25, 0.25), (0.75, 0.75, 0.75))


@pytest.fixture(scope="session")
def sphere_mesh():
    return shapes.icosphere((0.5, 0.5, 0.5), 0.3, subdivisions=4)


@pytest.fixture(scope="session")
def torus_mesh():
    return shapes.torus()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one verdict line per acceptance criterion, echoed in the terminal summary
VERDICTS = []


@pytest.fixture
def verdict():
    def record(tag, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {tag}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
