import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pme.dataset import assemble, sobol_sample
from pme.embedding import EmbeddingConfig, fit
from pme.surrogate import SyntheticCase


@pytest.fixture(scope="session")
def case():
    return SyntheticCase()


@pytest.fixture(scope="session")
def sobol_raw(case):
    """4096 Sobol samples of the default synthetic case, in sequence order."""
    U = sobol_sample(case.bounds(), 4096)
    return case.samples(U)


@pytest.fixture(scope="session")
def fitted(case, sobol_raw):
    """Snapshot sets and models for every mode on the first 1024 samples."""
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for mode in ("pme", "pi-pme", "pd-pme"):
            snaps = assemble(sobol_raw[:1024], case.measures(), mode)
            out[mode] = (snaps, fit(snaps, EmbeddingConfig(mode=mode)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
