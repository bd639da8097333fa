"""Ground states of stoquastic spin Hamiltonians as soft-RL value functions.

Submodules
----------
lattice      lattices, bit-packed spin configurations, actions, symmetries
hamiltonian  transverse-field Ising and XXZ models, sparse matrices
exact        power-iteration oracle and exact energies of trial states
mdp          the three RL formulations and their tabular solvers
fk_sim       continuous-time path simulation and Feynman-Kac estimators
neural       convolutional Q network and soft Q-learning
sampling     Metropolis-Hastings sampling and autocorrelation times
cli          command-line interface
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .exact import GroundState, ground_state_dense, local_energy, variational_energy_exact
from .hamiltonian import IsingModel, XXZModel, check_ergodic, hamiltonian_matrix, model_from_dict
from .lattice import Exchange, Flip, Lattice, SpinConfig, StateSpace, Stay, build_lattice
from .mdp import (
    ContinuousFK,
    DiscreteInfinite,
    DiscreteTerminal,
    Formulation,
    optimal_rates,
    solve_tabular,
    stationary_objective,
)
