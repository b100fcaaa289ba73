import pytest

from config import RunConfig, constant
from physics import builtin_test_model
from solver import SourceSpec, build_grid
from transforms import build_table, default_grid


@pytest.fixture(scope='session')
def model():
    return builtin_test_model()


@pytest.fixture(scope='session')
def table_mu1(model):
    return build_table(model, 1.0, default_grid(65))


@pytest.fixture(scope='session')
def table_small_mu(model):
    return build_table(model, 1e-4, default_grid(65))


@pytest.fixture
def grid():
    return build_grid(10)


@pytest.fixture
def stationary_config():
    """No sources and a uniform state: nothing moves."""
    return RunConfig(run_id='still', n_cells=10, T=1e-3, snapshots=(1e-3,),
                     sources=SourceSpec(c=1.0), u0=constant(0.5), recording='dense',
                     table_points=65)
