import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def planted_theta():
    """Theta PSI table of the default planted dataset and its manifest."""
    from psiconn.featureset import build_table
    from psiconn.spectral import SpectralConfig, psi_all_bands
    from psiconn.synthgen import PlantedPlan, planted_dataset

    epochs, manifest = planted_dataset(PlantedPlan(), 7)
    cfg = SpectralConfig(rate=1000.0)
    mats = [psi_all_bands(ep, cfg, ["theta"])[0] for ep in epochs]
    return build_table(mats, [ep.label for ep in epochs]), manifest
