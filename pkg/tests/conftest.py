import time

import pytest

from needlesim.phantom import default_spec, generate
from needlesim.planner import Planner


@pytest.fixture(scope="session")
def default_volume():
    return generate(default_spec())


@pytest.fixture(scope="session")
def planner_run(default_volume):
    """Planned reference paths plus the wall time the run took."""
    t0 = time.perf_counter()
    planner = Planner(default_volume)
    paths = planner.plan()
    elapsed = time.perf_counter() - t0
    assert len(paths) >= 500, "default phantom must yield a desk-scale path set"
    return {"planner": planner, "paths": paths, "elapsed_s": elapsed}


@pytest.fixture(scope="session")
def default_paths(planner_run):
    return planner_run["paths"]
