import json
from pathlib import Path

import numpy as np
import pytest

from dsdsim.model import SystemConfig

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture
def frozen():
    return FROZEN


@pytest.fixture
def small_cfg():
    return SystemConfig(n_tx=8, n_rx=8, n_taps=4, g_tx=16, g_rx=16, noise_var=0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
