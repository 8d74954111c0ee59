import numpy as np
import pytest

import driftmlp as dm


@pytest.fixture
def chain2():
    """Two-station open chain, unit costs, the workhorse instance."""
    return dm.build_open_chain(2, action_bound=1.0, holding_cost=[1.0, 1.0])


@pytest.fixture
def exact_ref():
    return dm.ReferenceProcess.exact_rbm()


@pytest.fixture
def euler_ref():
    return dm.ReferenceProcess.euler(steps_per_interval=50)
