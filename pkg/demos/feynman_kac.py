"""Feynman-Kac estimates of a ground-state amplitude.

Passive trajectories weighted by their accumulated potential reproduce
phi0(s0) on average.  Running the same estimator under the Doob-transformed
rates makes every weight identical.

    python3 demos/feynman_kac.py
"""

from quarl import IsingModel, build_lattice
from quarl.exact import ground_state_dense, tabulated
from quarl.fk_sim import ScaledRates, fk_estimate, fk_importance_estimate
from quarl.mdp import optimal_rates

model = IsingModel(build_lattice([4]), J=1.0, h=1.0)
gs = ground_state_dense(model)
phi0 = tabulated(gs.space, gs.amplitudes)
s0 = 0b0011
print(f"phi0(s0) = {phi0([s0])[0]:.6f}")

for T in (0.5, 1.0, 2.0):
    est = fk_estimate(model, s0, T, phi0, 50_000, seed=1, energy=gs.energy)
    print(f"passive  T={T:<4}: {est.estimate:.6f} +- {est.std_error:.6f}")

for label, rates in [("1.5x passive", ScaledRates(model, 1.5)), ("Doob", optimal_rates(model, phi0))]:
    est = fk_importance_estimate(model, rates, s0, 1.0, phi0, 5_000, seed=2, energy=gs.energy)
    print(f"{label:>12}: {est.estimate:.6f}  relative variance {est.variance / est.estimate**2:.2e}")
