import os

import numpy as np
import pytest
from hypothesis import settings

from quarl.hamiltonian import IsingModel, XXZModel
from quarl.lattice import build_lattice

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def pair():
    """Open two-site Ising model with ``J = h = 1``."""
    return IsingModel(build_lattice([2], periodic=False), 1.0, 1.0)


@pytest.fixture
def ring4_xxx():
    return XXZModel(build_lattice([4], periodic=True), 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.line(line)


ACCEPT_EPISODES = int(os.environ.get("QUARL_ACCEPT_EPISODES", "800"))
_TRAINED = {}


def train_4x4(seed):
    """Terminal-formulation run on the 4x4 lattice, cached for the session."""
    from quarl.neural import TrainConfig, train_soft_q

    if seed not in _TRAINED:
        model = IsingModel(build_lattice([4, 4]), 0.32758, 1.0)
        config = TrainConfig(formulation="terminal", episodes=ACCEPT_EPISODES, batch_size=512,
                             buffer_size=8192, seed=seed)
        _TRAINED[seed] = (model, train_soft_q(config, model))
    return _TRAINED[seed]


@pytest.fixture(scope="session")
def trained_4x4():
    return train_4x4
