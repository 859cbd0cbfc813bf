import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hierns.slicing import estimate_block_cov
from hierns.util import stream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def live_cov_for(model, n=128, seed=99):
    """Covariance snapshot from prior draws, as the engine would build it."""
    states = [model.sample_prior(stream(seed, 0, i)) for i in range(n)]
    psis = np.stack([s.psi for s in states]) if model.dims.d_psi else None
    thetas = np.stack([s.thetas for s in states])
    return estimate_block_cov(psis, thetas)


def prior_states(model, n, seed=7):
    return [model.sample_prior(stream(seed, 0, i)) for i in range(n)]
