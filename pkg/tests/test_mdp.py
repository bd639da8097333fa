import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quarl.errors import ConvergenceFailure, DivisionByZeroAmplitude, TerminalUnreachable, TimestepTooLarge
from quarl.exact import ground_state_dense
from quarl.fk_sim import PassiveRates
from quarl.hamiltonian import IsingModel
from quarl.lattice import Flip, SpinConfig, StateSpace, Stay, build_lattice
from quarl.mdp import (
    ContinuousFK,
    DiscreteInfinite,
    DiscreteTerminal,
    Formulation,
    desirability_power_iteration,
    optimal_policy_from_Q,
    optimal_rates,
    passive_policy_dt,
    power_iteration_desirability,
    soft_backup_U,
    solve_tabular,
    stationary_distribution,
    stationary_objective,
    tabulate,
    wavefunction_from_Q,
)

from oracles import chain_bonds, ground_state, ising_dense

S = SpinConfig.from_string
SQRT5 = np.sqrt(5.0)


def rel_err(a, b):
    a = np.asarray(a) / np.linalg.norm(a)
    b = np.asarray(b) / np.linalg.norm(b)
    return float(np.max(np.abs(a / b - 1)))


def test_passive_policy_examples(pair, ring4_xxx):
    assert passive_policy_dt(pair, S("++"), 0.1) == pytest.approx({Flip(0): 0.1, Flip(1): 0.1, Stay(): 0.8})
    assert passive_policy_dt(pair, S("++"), 1e-9)[Stay()] == pytest.approx(1.0, abs=1e-8)
    assert passive_policy_dt(ring4_xxx, S("++++"), 0.2) == {Stay(): 1.0}
    with pytest.raises(TimestepTooLarge):
        passive_policy_dt(pair, S("++"), 0.5)


@given(st.integers(0, 3), st.floats(1e-6, 0.49))
def test_passive_policy_sums_to_one(bits, dt):
    pair = IsingModel(build_lattice([2], periodic=False), 1.0, 1.0)
    assert sum(passive_policy_dt(pair, bits, dt).values()) == pytest.approx(1.0, abs=1e-15)


def test_backup_of_null_problem(pair):
    mdp = dataclasses.replace(tabulate(DiscreteInfinite(), pair), reward=np.zeros(4))
    U, _ = soft_backup_U(mdp, np.zeros(4))
    assert np.all(np.abs(U) < 1e-15)


def test_backup_fixed_point_infinite(pair):
    E0, phi = ground_state(ising_dense(2, chain_bonds(2, False), 1.0, 1.0))
    mdp = tabulate(DiscreteInfinite(), pair)
    U = np.log(phi) + 0.37
    U2, R = soft_backup_U(mdp, U)
    assert np.max(np.abs(U2 - U)) < 1e-12
    assert R == pytest.approx(-np.log(2.0 - E0), abs=1e-12)


def test_backup_fixed_point_terminal():
    model = IsingModel(build_lattice([4]), 1.0, 1.0)
    E0, phi = ground_state(ising_dense(4, chain_bonds(4, True), 1.0, 1.0))
    mdp = tabulate(DiscreteTerminal(E0=E0), model)
    U = np.log(phi / phi[0])
    U2, _ = soft_backup_U(mdp, U)
    assert np.max(np.abs(U2 - U)) < 1e-12


def test_solve_examples(pair):
    gs = ground_state_dense(pair)
    inf = solve_tabular(DiscreteInfinite(C=2.0), pair)
    assert abs(inf.energy + SQRT5) < 1e-8
    fk = solve_tabular(ContinuousFK(1e-4), pair, tol=1e-9)
    assert abs(fk.R_star / 1e-4 - gs.energy) < 1e-2
    all_up = S("++").bits
    term = solve_tabular(DiscreteTerminal(E0=gs.energy, terminals=[all_up]), pair)
    z = np.exp(term.U)
    assert z[term.space.index(np.array([all_up]))[0]] == 1.0
    assert np.max(np.abs(z - gs.amplitudes / gs.amplitude(np.array([all_up]))[0])) < 1e-8


@pytest.mark.parametrize("dims", [[4], [8], [3, 3]])
@pytest.mark.parametrize("kind", ["infinite", "terminal"])
def test_discrete_solvers_agree_with_oracle(dims, kind):
    model = IsingModel(build_lattice(dims), 1.0, 1.0)
    gs = ground_state_dense(model)
    f = DiscreteInfinite() if kind == "infinite" else DiscreteTerminal(E0=gs.energy)
    table = solve_tabular(f, model)
    assert rel_err(np.exp(table.U), gs.amplitudes) < 1e-6
    assert abs(table.energy - gs.energy) < 1e-8
    # the second route: linear desirability iteration
    z, R = desirability_power_iteration(f, model)
    diff = table.U - np.log(z)
    assert np.ptp(diff) < 1e-8
    if kind == "infinite":
        assert abs(R - table.R_star) < 1e-9


def test_fk_energy_recovery():
    model = IsingModel(build_lattice([4]), 1.0, 1.0)
    gs = ground_state_dense(model)
    dt = 1e-3
    table = solve_tabular(ContinuousFK(dt), model, tol=1e-10)
    assert abs(table.energy - gs.energy) < 5 * dt * abs(gs.energy)


def test_desirability_examples(pair, ring4_xxx):
    gs = ground_state_dense(pair)
    z, _ = desirability_power_iteration(DiscreteInfinite(), pair)
    assert rel_err(z, gs.amplitudes) < 1e-8
    mdp = dataclasses.replace(tabulate(DiscreteInfinite(), pair), reward=np.zeros(4))
    z, R = power_iteration_desirability(mdp)
    assert np.allclose(z, 1.0, atol=1e-12) and abs(R) < 1e-12
    z, _ = desirability_power_iteration(DiscreteInfinite(), ring4_xxx, sector=0)
    assert np.allclose(z, 1.0, atol=1e-10)


def test_wavefunction_from_Q_examples(pair):
    f = DiscreteInfinite()
    _, logp = f.log_policy(pair, np.arange(4))
    assert np.allclose(wavefunction_from_Q(np.zeros(logp.shape), logp), 1.0)
    q = solve_tabular(f, pair).q_table()
    phi = q.wavefunction()
    assert rel_err(phi, ground_state_dense(pair).amplitudes) < 1e-6
    assert np.allclose(wavefunction_from_Q(q.Q + 0.8, logp), np.exp(0.8) * phi)


def test_policy_examples(pair):
    logp = np.log([[0.5, 0.5]])
    assert np.allclose(optimal_policy_from_Q(np.array([[np.log(3.0), 0.0]]), logp), [[0.75, 0.25]])
    assert np.allclose(optimal_policy_from_Q(np.full((1, 2), 4.2), logp), [[0.5, 0.5]])


def test_fk_policy_matches_doob_rates(pair):
    dt = 1e-4
    table = solve_tabular(ContinuousFK(dt), pair, tol=1e-11)
    pi = table.q_table().policy()
    nbrs, doob = optimal_rates(pair, (table.space, np.exp(table.U)))(table.space.bits)
    assert np.allclose(pi[:, :-1] / dt, doob, rtol=1e-3)


@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.lists(st.floats(0.05, 1), min_size=3, max_size=3),
    st.floats(-50, 50),
)
def test_policy_invariant_under_q_shift(q, p, c):
    q = np.array([q])
    logp = np.log(np.array([p]) / np.sum(p))
    pi = optimal_policy_from_Q(q, logp)
    assert abs(pi.sum() - 1) < 1e-12
    assert np.allclose(pi, optimal_policy_from_Q(q + c, logp), atol=1e-12)


def test_optimal_rates_examples(pair):
    space = StateSpace(pair.lattice)
    _, passive = pair.passive_rates(space.bits)
    _, doob = optimal_rates(pair, (space, np.ones(4)))(space.bits)
    assert np.array_equal(doob, passive)
    gs = ground_state_dense(pair)
    nbrs, doob = optimal_rates(pair, (gs.space, gs.amplitudes))(np.array([S("++").bits]))
    ratio = gs.amplitude(np.array([S("+-").bits]))[0] / gs.amplitude(np.array([S("++").bits]))[0]
    assert np.allclose(doob, ratio)
    assert ratio < 1
    with pytest.raises(DivisionByZeroAmplitude):
        optimal_rates(pair, (space, np.array([1.0, 0.0, 1.0, 1.0])))


@pytest.mark.parametrize("model", [
    IsingModel(build_lattice([6]), 1.0, 0.9),
    IsingModel(build_lattice([2, 4], periodic=False), 0.5, 1.0),
    IsingModel(build_lattice([10], periodic=False), 1.0, 1.0),
])
def test_doob_stationary_law_is_phi_squared(model):
    gs = ground_state_dense(model)
    pi = stationary_distribution(optimal_rates(model, (gs.space, gs.amplitudes)), gs.space)
    assert np.max(np.abs(pi - gs.amplitudes**2)) < 1e-10


@pytest.mark.parametrize("dims", [[2], [4], [8], [2, 2]])
def test_stationary_objective_equals_minus_energy(dims):
    model = IsingModel(build_lattice(dims, periodic=dims != [2]), 0.9, 1.1)
    gs = ground_state_dense(model)
    obj = stationary_objective(model, optimal_rates(model, (gs.space, gs.amplitudes)), gs.space)
    assert abs(obj + gs.energy) < 1e-6
    assert stationary_objective(model, PassiveRates(model), gs.space) <= -gs.energy + 1e-12


_RING = IsingModel(build_lattice([4]), 1.0, 0.8)
_RING_E0 = ground_state_dense(_RING).energy


@given(st.integers(0, 2**32 - 1))
def test_objective_is_bounded_by_minus_energy(seed):
    space = StateSpace(_RING.lattice)
    phi = np.random.default_rng(seed).uniform(0.05, 1.0, len(space))
    assert stationary_objective(_RING, optimal_rates(_RING, (space, phi)), space) <= -_RING_E0 + 1e-10


def test_terminal_unreachable(ring4_xxx):
    with pytest.raises(TerminalUnreachable):
        tabulate(DiscreteTerminal(E0=-5.0), ring4_xxx, sector=0)


def test_convergence_failure(pair):
    with pytest.raises(ConvergenceFailure):
        solve_tabular(DiscreteInfinite(), pair, max_iter=2)


def test_formulation_rewards(pair):
    bits = np.arange(4)
    V = pair.potential(bits)
    assert np.allclose(ContinuousFK(0.01).reward(pair, bits), -0.01 * V)
    C = 2.0
    Z1 = C - pair.diagonal(bits) + 2.0
    assert np.allclose(DiscreteInfinite(C).reward(pair, bits), np.log(Z1))
    E0 = -SQRT5
    assert np.allclose(DiscreteTerminal(E0).reward(pair, bits), np.log(2.0 / (pair.diagonal(bits) - E0)))
    assert DiscreteInfinite(C).energy_from_rstar(-np.log(C - E0)) == pytest.approx(E0)
    with pytest.raises(ValueError):
        Formulation("discounted")
