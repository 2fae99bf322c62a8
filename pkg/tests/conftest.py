import pytest

from measure_embed import DiscreteMeasure, solve_ot


@pytest.fixture(scope="session", autouse=True)
def warm_solver():
    """Compile or load-from-cache the jitted transport kernel once, so timed
    tests measure solve time rather than compilation."""
    m = DiscreteMeasure([[0.0], [1.0]])
    solve_ot(m, m)
