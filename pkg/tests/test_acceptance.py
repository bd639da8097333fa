"""Acceptance criteria 1-10; each test prints one pass/fail line."""

import os
import time

import numpy as np
import pytest

import quarl.fk_sim as fk_sim
from quarl.exact import ground_state_dense, tabulated, variational_energy_exact
from quarl.fk_sim import fk_estimate, fk_importance_estimate
from quarl.hamiltonian import IsingModel, XXZModel
from quarl.lattice import StateSpace, build_lattice
from quarl.mdp import ContinuousFK, DiscreteInfinite, DiscreteTerminal, optimal_rates, solve_tabular
from quarl.neural import QNetwork
from quarl.sampling import (
    QMultiFlip,
    QSingleFlip,
    TabulatedWavefunction,
    UniformSingleFlip,
    mh_transition_matrix,
    run_chains,
    state_histogram,
    variational_energy_mc,
)

from acceptance_report import report
from conftest import ACCEPT_EPISODES
from oracles import ground_state, ising_dense, chain_bonds, square_bonds

SQRT5 = np.sqrt(5.0)
# frozen 2^16-state oracle for the 4x4 lattice at J = 0.32758, h = 1 (power iteration and Lanczos agree)
E0_4X4 = -17.093780469215847


def max_rel(a, b):
    a = np.asarray(a) / np.linalg.norm(a)
    b = np.asarray(b) / np.linalg.norm(b)
    return float(np.max(np.abs(a / b - 1)))


# -- 1 -------------------------------------------------------------------------

ORACLE_CASES = [([2], False), ([4], True), ([8], True), ([3, 3], True)]


def test_criterion_1_tabular_solvers_match_oracle():
    start = time.perf_counter()
    worst_e, worst_phi = 0.0, 0.0
    for dims, periodic in ORACLE_CASES:
        model = IsingModel(build_lattice(dims, periodic=periodic), 1.0, 1.0)
        gs = ground_state_dense(model)
        # independent dense check of the power-iteration oracle
        bonds = chain_bonds(dims[0], periodic) if len(dims) == 1 else square_bonds(*dims, periodic)
        e_dense, _ = ground_state(ising_dense(model.n_sites, bonds, 1.0, 1.0))
        assert abs(gs.energy - e_dense) < 1e-9
        for f in (DiscreteInfinite(), DiscreteTerminal(gs.energy)):
            table = solve_tabular(f, model)
            worst_e = max(worst_e, abs(table.energy - gs.energy))
            worst_phi = max(worst_phi, max_rel(table.wavefunction(), gs.amplitudes))
    elapsed = time.perf_counter() - start
    ok = worst_e < 1e-8 and worst_phi < 1e-6 and elapsed < 10
    report(1, "tabular solvers recover the oracle", ok,
           f"max |dE| {worst_e:.1e}, max phi rel err {worst_phi:.1e}, {elapsed:.1f}s")
    assert ok


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_fk_tabular_solve(pair):
    start = time.perf_counter()
    dt = 1e-4
    table = solve_tabular(ContinuousFK(dt), pair)
    err = abs(table.energy + SQRT5)
    elapsed = time.perf_counter() - start
    ok = err < 5 * dt * SQRT5 and elapsed < 5
    report(2, "FK tabular solve at dt = 1e-4", ok, f"|E - E0| {err:.2e} vs bound {5 * dt * SQRT5:.2e}, {elapsed:.1f}s")
    assert ok


# -- 3 -------------------------------------------------------------------------


def test_criterion_3_feynman_kac_monte_carlo(monkeypatch):
    start = time.perf_counter()
    model = IsingModel(build_lattice([4]), 1.0, 1.0)
    gs = ground_state_dense(model)
    phi0 = tabulated(gs.space, gs.amplitudes)
    s0 = 0b0011
    target = phi0(np.array([s0]))[0]
    z = {}
    for T in (0.5, 1.0, 2.0):
        est = fk_estimate(model, s0, T, phi0, 100_000, seed=int(T * 10), energy=gs.energy)
        z[T] = (est.estimate - target) / est.std_error
    # the opposite sign convention must be rejected by the same data
    monkeypatch.setattr(fk_sim, "FK_ENERGY_SIGN", 1.0)
    wrong = fk_estimate(model, s0, 2.0, phi0, 100_000, seed=20, energy=gs.energy)
    z_wrong = (wrong.estimate - target) / wrong.std_error
    elapsed = time.perf_counter() - start
    ok = all(abs(v) < 3 for v in z.values()) and abs(z_wrong) > 3 and elapsed < 60
    detail = ", ".join(f"T={T}: {v:+.2f} sigma" for T, v in z.items())
    report(3, "Feynman-Kac estimate reproduces phi0", ok, f"{detail}; flipped sign {z_wrong:+.0f} sigma, {elapsed:.1f}s")
    assert ok


# -- 4 -------------------------------------------------------------------------


def test_criterion_4_zero_variance_importance_sampling():
    start = time.perf_counter()
    worst = 0.0
    for dims in ([4], [3, 3]):
        model = IsingModel(build_lattice(dims), 1.0, 1.0)
        gs = ground_state_dense(model)
        phi0 = tabulated(gs.space, gs.amplitudes)
        for s0 in (0, 0b101):
            est = fk_importance_estimate(model, optimal_rates(model, phi0), s0, 2.0, phi0, 5000, seed=1, energy=gs.energy)
            worst = max(worst, est.variance / est.estimate**2)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 30
    report(4, "optimal rates give zero-variance weights", ok, f"max relative variance {worst:.1e}, {elapsed:.1f}s")
    assert ok


# -- 5 -------------------------------------------------------------------------


def test_criterion_5_gradient_check():
    start = time.perf_counter()
    lat = build_lattice([4, 4])
    net = QNetwork(lat, channels=8, hidden_layers=3, seed=1, zero_head=False)
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 1 << 16, 4)
    weights = rng.normal(size=(4, 16))

    def loss():
        return float(np.sum(weights * net.q_values(bits)))

    _, cache = net.forward_cached(bits)
    grads = net.backward(cache, weights)
    eps = 1e-4
    worst = {}
    for name, p in net.params.items():
        errs = []
        for idx in list(np.ndindex(p.shape))[:: max(1, p.size // 40)]:
            old = p[idx]
            p[idx] = old + eps
            up = loss()
            p[idx] = old - eps
            down = loss()
            p[idx] = old
            fd = (up - down) / (2 * eps)
            an = grads[name][idx]
            errs.append(abs(fd - an) / max(abs(fd), abs(an), 1e-8))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 30
    report(5, "finite-difference gradient check on every layer", ok,
           f"max relative error {max(worst.values()):.1e} over {len(worst)} parameter groups, {elapsed:.1f}s")
    assert ok


# -- 6 -------------------------------------------------------------------------


def test_criterion_6_neural_training_4x4(trained_4x4):
    start = time.perf_counter()
    errors = []
    for seed in (0, 1, 2):
        _, res = trained_4x4(seed)
        errors.append(abs(res.final_energy / E0_4X4 - 1))
        if sum(e < 0.01 for e in errors) >= 2:
            break
    passed = sum(e < 0.01 for e in errors)
    ok = passed >= 2
    report(6, "4x4 terminal training within 1% of E0", ok,
           f"{passed}/{len(errors)} seeds pass, relative errors {', '.join(f'{e:.3%}' for e in errors)}, "
           f"{ACCEPT_EPISODES} episodes, {time.perf_counter() - start:.0f}s")
    assert ok


# -- 7 -------------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("QUARL_STRETCH"), reason="multi-hour run; set QUARL_STRETCH=1")
def test_criterion_7_stretch_6x6():
    from quarl.neural import TrainConfig, train_soft_q

    model = IsingModel(build_lattice([6, 6]), 0.32758, 1.0)
    target = -1.06375
    best = np.inf
    for kind in ("fk", "infinite", "terminal"):
        config = TrainConfig(formulation=kind, episodes=4500, seed=0)
        res = train_soft_q(config, model)
        best = min(best, abs(res.final_energy / model.n_sites / target - 1))
    ok = best < 0.005
    report(7, "6x6 per-site energy within 0.5%", ok, f"best relative error {best:.3%}")
    assert ok


# -- 8 -------------------------------------------------------------------------


def test_criterion_8_sampler_correctness(pair):
    start = time.perf_counter()
    worst_db = 0.0
    rng = np.random.default_rng(0)
    for n in (2, 3, 4):
        space = StateSpace(build_lattice([n]))
        wf = TabulatedWavefunction(space, rng.uniform(0.1, 2.0, len(space)), q_table=rng.normal(size=(len(space), n)))
        for prop in (UniformSingleFlip(), QSingleFlip(), QMultiFlip(2)):
            P, pi = mh_transition_matrix(wf, prop, space)
            flow = pi[:, None] * P
            worst_db = max(worst_db, float(np.max(np.abs(flow - flow.T))))
    gs = ground_state_dense(pair)
    wf = TabulatedWavefunction(gs.space, gs.amplitudes)
    samples, _ = run_chains(wf, QSingleFlip(), 2, 62_500, 20, seed=5, n_chains=16)
    tv = 0.5 * float(np.abs(state_histogram(samples, gs.space) - gs.amplitudes**2).sum())
    elapsed = time.perf_counter() - start
    ok = worst_db < 1e-12 and tv < 0.005 and elapsed < 60
    report(8, "detailed balance and empirical distribution", ok,
           f"max flow asymmetry {worst_db:.1e}, TV {tv:.4f} over {samples.size} samples, {elapsed:.1f}s")
    assert ok


# -- 9 -------------------------------------------------------------------------


def test_criterion_9_autocorrelation_speedup(trained_4x4):
    start = time.perf_counter()
    model, res = trained_4x4(0)
    wf = TabulatedWavefunction.from_wavefunction(res.wavefunction(model), StateSpace(model.lattice))
    ratios = []
    for seed in (0, 1, 2):
        taus = {}
        for prop in (UniformSingleFlip(), QSingleFlip()):
            mc = variational_energy_mc(model, wf, prop, n_steps=20_000, burn_in=500, seed=seed, n_chains=16)
            taus[prop.name] = mc.stats.tau
        ratios.append(taus["q1"] / taus["uniform"])
    median = float(np.median(ratios))
    elapsed = time.perf_counter() - start
    ok = median <= 0.75 and elapsed < 600
    report(9, "Q-guided proposal shortens tau", ok,
           f"median tau(q1)/tau(uniform) {median:.3f}, ratios {', '.join(f'{r:.3f}' for r in ratios)}, {elapsed:.0f}s")
    assert ok


def test_trained_model_mc_energy_matches_exact_sum(trained_4x4):
    model, res = trained_4x4(0)
    space = StateSpace(model.lattice)
    wf = TabulatedWavefunction.from_wavefunction(res.wavefunction(model), space)
    exact = variational_energy_exact(model, wf)
    mc = variational_energy_mc(model, wf, QSingleFlip(), n_steps=5000, seed=3, n_chains=16)
    assert abs(mc.energy - exact) < 3 * mc.std_error
    assert exact == pytest.approx(res.final_energy, rel=1e-10)


# -- 10 ------------------------------------------------------------------------


def test_criterion_10_xxx_ring():
    start = time.perf_counter()
    model = XXZModel(build_lattice([4]), 1.0, 1.0)
    space = StateSpace(model.lattice, 2)
    spread = float(np.ptp(model.potential(space.bits)))
    expected = -1.0 * model.lattice.n_bonds
    gs = ground_state_dense(model, space)
    table = solve_tabular(DiscreteInfinite(), model, space)
    uniform = np.full(len(space), 1 / np.sqrt(len(space)))
    e_err = max(abs(gs.energy - expected), abs(table.energy - expected))
    phi_err = max(float(np.max(np.abs(gs.amplitudes - uniform))), float(np.max(np.abs(table.wavefunction() - uniform))))
    elapsed = time.perf_counter() - start
    ok = spread == 0.0 and e_err < 1e-10 and phi_err < 1e-10 and elapsed < 5
    report(10, "XXX ring sector", ok, f"V spread {spread}, |E0 + 4| {e_err:.1e}, phi deviation {phi_err:.1e}, {elapsed:.2f}s")
    assert ok
