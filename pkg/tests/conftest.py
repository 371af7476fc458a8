import numpy as np
import pytest

from liegraph.graph import build_graph, default_knn, laplacian, make_metric, power_lambda_max
from liegraph.sampling import GridKind, GridSpec, build_vertices

EPS_ANISO = float(np.sqrt(0.1))


def built(kind, *, nx=None, ny=None, level=None, orient=1, epsilon=1.0, alpha=None, knn=None):
    fields = {k: v for k, v in dict(nx=nx, ny=ny, level=level).items() if v is not None}
    spec = GridSpec(kind=kind, n_orient=orient, **fields)
    verts = build_vertices(spec)
    metric, resolved = make_metric(spec, epsilon=epsilon, alpha=alpha)
    graph = build_graph(verts, metric, knn if knn is not None else default_knn(spec),
                        alpha=resolved)
    return graph


@pytest.fixture(scope="session")
def se2_8x8x4():
    return built(GridKind.SE2_GRID, nx=8, ny=8, orient=4, epsilon=EPS_ANISO, alpha=1.0, knn=16)


@pytest.fixture(scope="session")
def se2_8x8x4_lap(se2_8x8x4):
    return power_lambda_max(laplacian(se2_8x8x4))


@pytest.fixture(scope="session")
def se2_16x16x6():
    return built(GridKind.SE2_GRID, nx=16, ny=16, orient=6, epsilon=EPS_ANISO, alpha=1.0, knn=16)


@pytest.fixture(scope="session")
def r2_16x16():
    return built(GridKind.R2_GRID, nx=16, ny=16)


@pytest.fixture(scope="session")
def s2_level2():
    return built(GridKind.S2_ICOSAHEDRAL, level=2)
