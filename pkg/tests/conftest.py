import pytest
import numpy as np
import logging

logger = logging.getLogger(__name__)

from src.autocf.data.graph import InteractionGraph
from src.autocf.tensor import set_default_dtype
from src.autocf.training.diagnostics import toy_graph, toy_split

def pytest_configure(config):
    config.option.capture = "tee-sys"

@pytest.fixture(autouse=True)
def float64_mode():
    """Every test starts (and ends) in the default 64-bit mode."""
    set_default_dtype('float64')
    yield
    set_default_dtype('float64')

@pytest.fixture
def toy():
    """Fixed 5-user / 6-item graph with 13 interactions."""
    return toy_graph()

@pytest.fixture
def toy_data():
    """Toy graph as a split with one validation and one test edge."""
    return toy_split()

@pytest.fixture
def rng():
    return np.random.default_rng(1234)

def random_graph(rng: np.random.Generator, num_users: int, num_items: int,
                 density: float = 0.3) -> InteractionGraph:
    """Random bipartite graph; every (user, item) cell is an edge with probability `density`."""
    cells = rng.random((num_users, num_items)) < density
    users, items = np.nonzero(cells)
    return InteractionGraph(num_users, num_items, users, items)
