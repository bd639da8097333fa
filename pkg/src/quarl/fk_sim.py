"""Continuous-time Markov chains and Feynman-Kac estimators.

Trajectories are simulated with the exponential-clock construction; because
the potential is constant between jumps, every time integral along a path is
computed exactly.  Estimators run all trajectories as one vectorised batch.
Random numbers come from a counter-based generator keyed by
``(seed, trajectory, step, slot)``, so trajectory ``i`` is the same path no
matter how many others are simulated alongside it.

The ground-state identity checked here is

    phi0(s) = E[ exp(-int_0^T (V(s_t) - E0) dt) phi0(s_T) ],

i.e. the energy enters with sign ``FK_ENERGY_SIGN = -1``.  This is the only
sign for which ``e^{-E0 t} phi0`` solves the imaginary-time equation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import SupportMismatch
from .hamiltonian import StoquasticModel
from .lattice import SpinConfig

FK_ENERGY_SIGN = -1.0

# ---------------------------------------------------------------------------
# Counter-based uniforms (SplitMix64 finaliser)
# ---------------------------------------------------------------------------

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(x):
    x = np.asarray(x, dtype=np.uint64) + _GAMMA
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def counter_uniforms(seed: int, stream, counter: int, slot: int = 0) -> np.ndarray:
    """Uniforms in (0, 1), a pure function of ``(seed, stream, counter, slot)``."""
    with np.errstate(over="ignore"):
        key = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        x = _mix(key ^ _mix(np.asarray(stream, dtype=np.uint64)))
        x = _mix(x ^ np.uint64((int(counter) << 2) | (slot & 3)))
    return ((x >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


# ---------------------------------------------------------------------------
# Rate maps
# ---------------------------------------------------------------------------


class RateMap:
    """Callable ``bits -> (nbrs, rates)`` with the model's slot layout.

    ``rates[m, k]`` is the rate of moving from ``bits[m]`` to ``nbrs[m, k]``.
    """

    tag = "parameterized"

    def __init__(self, model: StoquasticModel, fn: Callable | None = None, tag: str | None = None):
        self.model = model
        self._fn = fn
        if tag is not None:
            self.tag = tag

    def __call__(self, bits):
        return self._fn(np.atleast_1d(np.asarray(bits, dtype=np.int64)))


class PassiveRates(RateMap):
    """``Gamma(s -> s') = -H_ss'``."""

    tag = "passive"

    def __call__(self, bits):
        return self.model.passive_rates(np.atleast_1d(np.asarray(bits, dtype=np.int64)))


class ScaledRates(RateMap):
    """Passive rates multiplied by ``factor`` (a scalar or per-slot array)."""

    def __init__(self, model, factor):
        super().__init__(model)
        self.factor = np.asarray(factor, dtype=float)

    def __call__(self, bits):
        nbrs, r = self.model.passive_rates(np.atleast_1d(np.asarray(bits, dtype=np.int64)))
        return nbrs, r * self.factor


class DoobRates(RateMap):
    """Ground-state transform ``Gamma(s->s') phi(s') / phi(s)``."""

    def __init__(self, model, phi: Callable):
        super().__init__(model)
        self.phi = phi

    def __call__(self, bits):
        from .errors import DivisionByZeroAmplitude

        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        nbrs, r = self.model.passive_rates(bits)
        centre = np.asarray(self.phi(bits), dtype=float)
        if np.any(centre <= 0):
            raise DivisionByZeroAmplitude("Doob transform needs phi(s) > 0")
        out = np.zeros_like(r)
        live = r > 0
        if live.any():
            out[live] = r[live] * self.phi(nbrs[live]) / np.broadcast_to(centre[:, None], r.shape)[live]
        return nbrs, out


# ---------------------------------------------------------------------------
# Entropy rate
# ---------------------------------------------------------------------------


def _entropy_terms(controlled, passive):
    controlled = np.asarray(controlled, dtype=float)
    passive = np.asarray(passive, dtype=float)
    if np.any((controlled > 0) & (passive <= 0)):
        raise SupportMismatch("controlled rate is positive where the passive rate vanishes")
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = np.where(controlled > 0, controlled * np.log(controlled / np.where(passive > 0, passive, 1.0)), 0.0)
    return passive - controlled + log_term


def entropy_rate(controlled_row, passive_row) -> float:
    """``sum [Gamma - Gamma_theta + Gamma_theta log(Gamma_theta / Gamma)]`` over one row."""
    return float(np.sum(_entropy_terms(controlled_row, passive_row)))


def entropy_rates(model: StoquasticModel, rates: RateMap, bits) -> np.ndarray:
    bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
    _, passive = model.passive_rates(bits)
    _, controlled = rates(bits)
    return _entropy_terms(controlled, passive).sum(axis=1)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    states: list  # SpinConfig or int bit patterns
    jump_times: np.ndarray
    T: float

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def holding_times(self) -> np.ndarray:
        edges = np.concatenate([[0.0], self.jump_times, [self.T]])
        return np.diff(edges)


def _choose_slot(rates, total, u):
    cum = np.cumsum(rates, axis=1)
    k = np.argmax(cum > (u * total)[:, None], axis=1)
    # guard against u * total rounding above the final cumulative sum
    last = rates.shape[1] - 1 - np.argmax(rates[:, ::-1] > 0, axis=1)
    return np.where(cum[np.arange(len(k)), k] > u * total, k, last)


def simulate_ctmc(rates: Callable, s0, T: float, seed: int = 0, stream: int = 0) -> Trajectory:
    """One path of the chain generated by ``rates`` on ``[0, T]``.

    Absorbing states simply hold until ``T``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    n_sites = s0.n_sites if isinstance(s0, SpinConfig) else None
    state = s0.bits if n_sites is not None else int(s0)
    states, times = [state], []
    t, step = 0.0, 0
    while True:
        nbrs, r = rates(np.array([state], dtype=np.int64))
        total = float(r.sum())
        if total <= 0:
            break
        u1 = float(counter_uniforms(seed, stream, step, 0))
        u2 = counter_uniforms(seed, np.array([stream]), step, 1)
        t += -np.log(u1) / total
        if t >= T:
            break
        k = int(_choose_slot(r, np.array([total]), u2)[0])
        state = int(nbrs[0, k])
        states.append(state)
        times.append(t)
        step += 1
    if n_sites is not None:
        states = [SpinConfig(b, n_sites) for b in states]
    return Trajectory(states, np.array(times), float(T))


@dataclass
class PathBatch:
    """Per-trajectory functionals of a simulated batch."""

    final: np.ndarray
    n_jumps: np.ndarray
    potential_integral: np.ndarray  # over [window_start, T]
    entropy_integral: np.ndarray | None  # over [window_start, T]
    log_likelihood_ratio: np.ndarray | None  # log dP_passive / dP_rates over [0, T]


def simulate_paths(
    model: StoquasticModel,
    rates: Callable,
    s0,
    T: float,
    n_traj: int,
    seed: int = 0,
    window_start: float = 0.0,
    entropy: bool = False,
    likelihood_ratio: bool = False,
) -> PathBatch:
    """Simulate ``n_traj`` independent paths and accumulate path functionals."""
    s0 = np.broadcast_to(np.asarray(s0.bits if isinstance(s0, SpinConfig) else s0, dtype=np.int64), (n_traj,))
    state = s0.copy()
    t = np.zeros(n_traj)
    n_jumps = np.zeros(n_traj, dtype=np.int64)
    pot = np.zeros(n_traj)
    ent = np.zeros(n_traj) if entropy else None
    llr = np.zeros(n_traj) if likelihood_ratio else None
    active = np.arange(n_traj)
    step = 0
    if T <= 0:
        return PathBatch(state, n_jumps, pot, ent, llr)
    while active.size:
        b = state[active]
        nbrs, r = rates(b)
        total = r.sum(axis=1)
        u1 = counter_uniforms(seed, active, step, 0)
        u2 = counter_uniforms(seed, active, step, 1)
        with np.errstate(divide="ignore"):
            hold = np.where(total > 0, -np.log(u1) / np.where(total > 0, total, 1.0), np.inf)
        t0 = t[active]
        t1 = np.minimum(t0 + hold, T)
        w = np.clip(t1 - np.maximum(t0, window_start), 0.0, None)
        pot[active] += model.potential(b) * w
        if entropy or likelihood_ratio:
            _, passive = model.passive_rates(b)
            if np.any((r > 0) & (passive <= 0)):
                raise SupportMismatch("controlled rate is positive where the passive rate vanishes")
            if entropy:
                ent[active] += _entropy_terms(r, passive).sum(axis=1) * w
            if likelihood_ratio:
                llr[active] += (total - passive.sum(axis=1)) * (t1 - t0)
        jump = t0 + hold < T
        t[active] = t1
        if jump.any():
            idx = active[jump]
            k = _choose_slot(r[jump], total[jump], u2[jump])
            rows = np.nonzero(jump)[0]
            if likelihood_ratio:
                llr[idx] += np.log(passive[rows, k] / r[rows, k])
            state[idx] = nbrs[rows, k]
            n_jumps[idx] += 1
        active = active[jump]
        step += 1
    return PathBatch(state, n_jumps, pot, ent, llr)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


@dataclass
class FKEstimate:
    estimate: float
    std_error: float
    variance: float  # sample variance of the per-path weights
    n_jumps_mean: float
    weights: np.ndarray

    def __iter__(self):
        return iter((self.estimate, self.std_error))

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "variance": self.variance,
            "n_jumps_mean": self.n_jumps_mean,
        }


def _summarise(weights, n_jumps):
    n = len(weights)
    mean = float(np.mean(weights))
    var = float(np.var(weights, ddof=1)) if n > 1 else 0.0
    return FKEstimate(mean, float(np.sqrt(var / n)), var, float(np.mean(n_jumps)), weights)


def _terminal_values(terminal_fn, final):
    if terminal_fn is None:
        return np.ones(len(final))
    return np.asarray(terminal_fn(final), dtype=float)


def fk_estimate(
    model: StoquasticModel,
    s0,
    T: float,
    terminal_fn: Callable | None,
    n_traj: int,
    seed: int = 0,
    energy: float = 0.0,
) -> FKEstimate:
    """Monte-Carlo Feynman-Kac average over passive trajectories.

    Each path contributes ``exp(-int (V + FK_ENERGY_SIGN * energy) dt) *
    terminal_fn(s_T)``.  With ``energy = E0`` and ``terminal_fn = phi0`` the
    expectation is ``phi0(s0)`` for every ``T``.
    """
    if n_traj < 2:
        raise ValueError("need at least two trajectories for an error bar")
    batch = simulate_paths(model, PassiveRates(model), s0, T, n_traj, seed)
    log_w = -(batch.potential_integral + FK_ENERGY_SIGN * energy * T)
    return _summarise(np.exp(log_w) * _terminal_values(terminal_fn, batch.final), batch.n_jumps)


def fk_importance_estimate(
    model: StoquasticModel,
    rates: RateMap,
    s0,
    T: float,
    terminal_fn: Callable | None,
    n_traj: int,
    seed: int = 0,
    energy: float = 0.0,
) -> FKEstimate:
    """Same expectation as :func:`fk_estimate`, sampled under ``rates``.

    Paths are reweighted by the likelihood ratio of the passive dynamics
    against ``rates``.  With the Doob rates of the exact ground state and
    ``terminal_fn = phi0`` every path carries the same weight ``phi0(s0)``.
    """
    if n_traj < 2:
        raise ValueError("need at least two trajectories for an error bar")
    batch = simulate_paths(model, rates, s0, T, n_traj, seed, likelihood_ratio=True)
    log_w = batch.log_likelihood_ratio - (batch.potential_integral + FK_ENERGY_SIGN * energy * T)
    return _summarise(np.exp(log_w) * _terminal_values(terminal_fn, batch.final), batch.n_jumps)


@dataclass
class ObjectiveEstimate:
    value: float
    std_error: float

    def __iter__(self):
        return iter((self.value, self.std_error))


def objective_estimate(
    model: StoquasticModel,
    rates: RateMap,
    T: float,
    n_traj: int,
    seed: int = 0,
    s0=None,
    burn_in: float = 0.0,
) -> ObjectiveEstimate:
    """Time-averaged ``-(V + entropy rate)`` along trajectories of ``rates``.

    Averages over ``[burn_in, T]``; ``s0`` defaults to the all-up state.
    """
    if not T > burn_in >= 0:
        raise ValueError("need 0 <= burn_in < T")
    if s0 is None:
        s0 = (1 << model.n_sites) - 1
    batch = simulate_paths(model, rates, s0, T, n_traj, seed, window_start=burn_in, entropy=True)
    vals = -(batch.potential_integral + batch.entropy_integral) / (T - burn_in)
    se = float(np.std(vals, ddof=1) / np.sqrt(n_traj)) if n_traj > 1 else 0.0
    return ObjectiveEstimate(float(np.mean(vals)), se)
