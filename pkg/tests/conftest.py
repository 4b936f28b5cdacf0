import hypothesis
import numpy as np
import pytest

from services.config import DATA_DIR, ScenarioConfig
from services.primitives import build_library, load_envelopes
from services.vessel import DisturbanceConfig, VesselParams

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False)
hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture(scope="session")
def params():
    return VesselParams.reference()


@pytest.fixture(scope="session")
def quiet():
    return DisturbanceConfig()


@pytest.fixture(scope="session")
def model_ship_config():
    return ScenarioConfig.load(DATA_DIR / "model_ship_scenario.json")


@pytest.fixture(scope="session")
def reference_config():
    return ScenarioConfig.load(DATA_DIR / "reference_scenario.json")


@pytest.fixture(scope="session")
def model_ship_library(model_ship_config):
    config = model_ship_config
    envelopes = load_envelopes(config.resolve(config.library.envelopes))
    return build_library(envelopes, config.vessel.params, config.vessel.dt, config.library)


@pytest.fixture(scope="session")
def planning_library(reference_config):
    config = reference_config
    envelopes = load_envelopes(config.resolve(config.library.envelopes))
    return build_library(envelopes, config.vessel.params, config.vessel.dt, config.library)
