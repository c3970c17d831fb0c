import numpy as np
import pytest

from c70beam.beamline import BeamlineConfig
from c70beam.spectra import default_emitter_model


@pytest.fixture(scope="session")
def model():
    return default_emitter_model()


@pytest.fixture(scope="session")
def config():
    return BeamlineConfig()


@pytest.fixture(scope="session")
def fit_config():
    """Coarser transport profile used by fitting tests (documented in README)."""
    from dataclasses import replace

    return replace(BeamlineConfig(), t_bin_k=10.0, y_nodes=41)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
