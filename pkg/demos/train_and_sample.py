"""Soft Q-learning on a small lattice, then Metropolis-Hastings with Q-guided proposals.

Trains a convolutional Q network with the terminal-state formulation, then
compares the autocorrelation time of the potential energy under uniform and
Q-guided single-flip proposals.  Takes about a minute on one core.

    python3 demos/train_and_sample.py
"""

import logging

from quarl import IsingModel, StateSpace, build_lattice
from quarl.exact import ground_state_dense
from quarl.neural import TrainConfig, train_soft_q
from quarl.sampling import QMultiFlip, QSingleFlip, TabulatedWavefunction, UniformSingleFlip, variational_energy_mc

logging.basicConfig(level=logging.INFO, format="%(message)s")

model = IsingModel(build_lattice([3, 4]), J=0.32758, h=1.0)
E0 = ground_state_dense(model).energy
config = TrainConfig(formulation="terminal", episodes=400, batch_size=512, buffer_size=8192, channels=32, seed=0)
result = train_soft_q(config, model)
print(f"E_var = {result.final_energy:.6f}, exact {E0:.6f}, relative error {abs(result.final_energy / E0 - 1):.3%}")

# tabulate once so the chains do not re-run the network
wf = TabulatedWavefunction.from_wavefunction(result.wavefunction(model), StateSpace(model.lattice))
for proposal in (UniformSingleFlip(), QSingleFlip(), QMultiFlip(3)):
    mc = variational_energy_mc(model, wf, proposal, n_steps=10_000, seed=1)
    s = mc.stats
    print(f"{s.proposal:>8}: E = {s.energy:.5f} +- {s.std_error:.5f}  acceptance {s.acceptance_rate:.2f}  tau {s.tau:.2f}")
