import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from profix import missing_cov, prop_odds, simulation


@pytest.fixture(scope="session")
def prop_odds_data():
    """Seeded linear-design survival dataset, n=30."""
    rng = simulation.replication_rng(101, 0)
    u, delta, z = simulation.gen_prop_odds(prop_odds.LINEAR_DESIGN, 30, rng)
    return u, delta, z


@pytest.fixture(scope="session")
def prop_odds_model(prop_odds_data):
    u, delta, z = prop_odds_data
    return prop_odds.PropOddsModel.from_arrays(u, delta, z)


@pytest.fixture(scope="session")
def missing_cov_data():
    """Seeded missing-covariate dataset, n=50."""
    rng = simulation.replication_rng(102, 0)
    r, y, x = simulation.gen_missing_cov(missing_cov.MissingCovDesign(), 50, rng)
    return r, y, x


@pytest.fixture(scope="session")
def missing_cov_model(missing_cov_data):
    r, y, x = missing_cov_data
    return missing_cov.MissingCovModel.from_arrays(
        r, y, x, missing_cov.NormalRegression()
    )


@pytest.fixture(scope="session")
def missing_cov_population():
    return missing_cov.population_model(y_grid=800, y_grid_complete=200)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
