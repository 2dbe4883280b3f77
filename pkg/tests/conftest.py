import numpy as np
import pytest

from planrisk.core import ViewTensor
from planrisk.partition import grid_partition
from planrisk.planner import ModularPlannerSpec, SyntheticPlanner
from planrisk.synth import SynthSpec, generate


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def colinear_planner(weights, c=1, h=4, w=None, rows=None, cols=None, horizon=3, direction=(1.0, 0.0)):
    """Modular planner whose offsets are c_r * u on a C x (rows x cols) grid partition."""
    n = len(weights)
    if w is None:
        w = max(4, n)
    if rows is None:
        rows, cols = 1, n // c
    p = grid_partition((c, h, w), rows, cols)
    assert p.n_regions == n
    u = np.tile(np.asarray(direction, dtype=float), (horizon, 1))
    offsets = np.asarray(weights, dtype=float)[:, None, None] * u[None]
    base = np.cumsum(np.ones((horizon, 2)), axis=0)
    spec = ModularPlannerSpec(base, offsets)
    x = ViewTensor(np.full((c, 1, h, w), 0.5, dtype=np.float32))
    return SyntheticPlanner(spec, p), x, p


def random_modular(rng, n_regions, c=1, h=8, w=8, horizon=3, rows=None, cols=None):
    if rows is None:
        rows, cols = 1, n_regions // c
    p = grid_partition((c, h, w), rows, cols)
    offsets = rng.normal(size=(p.n_regions, horizon, 2))
    offsets[rng.random(p.n_regions) < 0.2] = 0.0
    spec = ModularPlannerSpec(rng.normal(size=(horizon, 2)), offsets)
    x = ViewTensor(rng.uniform(0.1, 1.0, (c, 2, h, w)).astype(np.float32))
    return SyntheticPlanner(spec, p), x, p


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    return generate(SynthSpec(scenes=5, samples_per_scene=4, seed=7), root)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
