import numpy as np
import pytest

from abmcalib.flood import DomainConfig, GevParams, generate_domain, simulate_flood_series
from abmcalib.likelihood import DataMode, ObservationSet
from abmcalib.model import DATA_GENERATING, ModelVariant, simulate_forward
from abmcalib.rng import derive_rng


@pytest.fixture(scope="session")
def gev():
    return GevParams()


@pytest.fixture(scope="session")
def domain(gev):
    return generate_domain(DomainConfig(), gev)


@pytest.fixture(scope="session")
def floods(gev):
    return simulate_flood_series(gev, 50, 50, derive_rng(1, "floods"))


@pytest.fixture(scope="session")
def individual_obs(domain, floods):
    states = simulate_forward(domain, DATA_GENERATING, floods, ModelVariant.SPATIAL_INTERACTIONS, 50,
                              derive_rng(1, "data", 100, 0))
    return ObservationSet.from_states(states, domain.parcel_ids, DataMode.INDIVIDUAL)


@pytest.fixture(scope="session")
def aggregate_obs(individual_obs):
    return individual_obs.to_aggregate()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
