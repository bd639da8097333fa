"""Ground states as linearly solvable maximum-entropy MDPs.

Three formulations share one tabular machinery:

``fk``
    Feynman-Kac in discretised continuous time.  Reward ``-V(s) dt``,
    reference policy is the passive policy ``p_dt``, ``R* = E0 dt``.
``infinite``
    Discrete time, infinite horizon.  Reward ``log Z1(s)``, reference policy
    ``p1``, ``R* = -log(C - E0)``.
``terminal``
    Discrete time with terminal states.  Reward ``log(Z2(s) / (H_ss - E0))``,
    reference policy ``p2``, ``U* = 0`` on terminal states.

In every case the optimal state value is the log of the ground-state
wavefunction, ``U*(s) = log phi0(s)`` (up to a constant for the infinite
horizon problems).  Action slots follow ``model.offdiag`` with one extra,
final column for the trivial action ``a0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.linalg

from .errors import (
    ConvergenceFailure,
    DegenerateGroundState,
    DivisionByZeroAmplitude,
    InvalidScale,
    InvalidShift,
    TerminalUnreachable,
    TimestepTooLarge,
)
from .exact import default_shift, variational_energy_exact
from .fk_sim import DoobRates, RateMap, entropy_rates
from .hamiltonian import StoquasticModel, check_ergodic
from .lattice import SpinConfig, StateSpace, Stay

FORMULATIONS = ("fk", "infinite", "terminal")


@dataclass(frozen=True)
class Formulation:
    """One of the three RL formulations plus the constants it needs.

    ``terminals`` holds bit patterns; ``None`` selects the two fully
    magnetised states.  ``C=None`` picks ``max_s H_ss + 1``.
    """

    kind: str
    dt: float = 1e-4
    C: float | None = None
    terminals: tuple | None = None
    E0: float | None = None

    def __post_init__(self):
        if self.kind not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}, got {self.kind!r}")
        if self.kind == "fk" and not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def horizon(self) -> str:
        return "terminal" if self.kind == "terminal" else "infinite"

    @property
    def uses_trivial_action(self) -> bool:
        return self.kind != "terminal"

    def with_energy(self, E0: float) -> "Formulation":
        return replace(self, E0=float(E0))

    def shift(self, model: StoquasticModel, space: StateSpace | None = None) -> float:
        if self.C is not None:
            return float(self.C)
        return default_shift(model, space)

    # -- reference policy and reward -------------------------------------

    def log_policy(self, model: StoquasticModel, bits, space=None):
        """``(succ, logp)`` of shape ``(M, K + 1)``; last column is ``a0``."""
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        nbrs, amps = model.offdiag(bits)
        rates = -amps
        if self.kind == "fk":
            probs = passive_policy_probs(model, bits, self.dt)
        elif self.kind == "infinite":
            C = self.shift(model, space)
            diag = model.diagonal(bits)
            if np.any(diag >= C):
                raise InvalidShift(f"C={C} must exceed every H_ss")
            stay = C - diag
            Z1 = stay + rates.sum(axis=1)
            probs = np.concatenate([rates, stay[:, None]], axis=1) / Z1[:, None]
        else:
            Z2 = rates.sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                probs = np.concatenate([rates / Z2[:, None], np.zeros((len(bits), 1))], axis=1)
        succ = np.concatenate([nbrs, bits[:, None]], axis=1)
        with np.errstate(divide="ignore"):
            return succ, np.log(probs)

    def reward(self, model: StoquasticModel, bits, space=None) -> np.ndarray:
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        if self.kind == "fk":
            return -model.potential(bits) * self.dt
        if self.kind == "infinite":
            C = self.shift(model, space)
            return np.log(C - model.diagonal(bits) + model.exit_rate(bits))
        if self.E0 is None:
            raise ValueError("the terminal formulation needs an energy estimate E0")
        gap = model.diagonal(bits) - self.E0
        if np.any(gap <= 0):
            raise InvalidScale("H_ss - E0 must be positive for the terminal formulation")
        return np.log(model.exit_rate(bits) / gap)

    def terminal_bits(self, model: StoquasticModel) -> np.ndarray:
        if self.terminals is not None:
            return np.asarray(self.terminals, dtype=np.int64)
        return np.array([0, (1 << model.n_sites) - 1], dtype=np.int64)

    def is_terminal(self, model: StoquasticModel, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        if self.kind != "terminal":
            return np.zeros(bits.shape, dtype=bool)
        return np.isin(bits, self.terminal_bits(model))

    def energy_from_rstar(self, R_star: float, space=None, model=None) -> float:
        if self.kind == "fk":
            return R_star / self.dt
        if self.kind == "infinite":
            return self.shift(model, space) - np.exp(-R_star)
        raise ValueError("the terminal formulation has no average reward")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "fk":
            d["dt"] = self.dt
        if self.C is not None:
            d["C"] = self.C
        if self.terminals is not None:
            d["terminals"] = [int(t) for t in self.terminals]
        if self.E0 is not None:
            d["E0"] = self.E0
        return d


def ContinuousFK(dt: float = 1e-4) -> Formulation:
    return Formulation("fk", dt=dt)


def DiscreteInfinite(C: float | None = None) -> Formulation:
    return Formulation("infinite", C=C)


def DiscreteTerminal(E0: float | None = None, terminals=None) -> Formulation:
    if terminals is not None:
        terminals = tuple(int(t.bits if isinstance(t, SpinConfig) else t) for t in terminals)
    return Formulation("terminal", terminals=terminals, E0=E0)


def passive_policy_probs(model: StoquasticModel, bits, dt: float) -> np.ndarray:
    """``(M, K + 1)`` probabilities of the small-timestep passive policy."""
    rates = -model.offdiag(bits)[1]
    out = rates.sum(axis=1) * dt
    if np.any(out >= 1.0):
        raise TimestepTooLarge(f"dt * exit rate reaches {out.max():.3g}; need < 1")
    return np.concatenate([rates * dt, (1.0 - out)[:, None]], axis=1)


def passive_policy_dt(model: StoquasticModel, s, dt: float) -> dict:
    """Passive policy at one configuration as ``{action: probability}``."""
    bits = s.bits if isinstance(s, SpinConfig) else int(s)
    probs = passive_policy_probs(model, np.array([bits]), dt)[0]
    out = {model.move(k): float(p) for k, p in enumerate(probs[:-1]) if p > 0}
    out[Stay()] = float(probs[-1])
    return out


# ---------------------------------------------------------------------------
# Tabular problems
# ---------------------------------------------------------------------------


def _lse(x: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp tolerating rows of ``-inf``."""
    m = x.max(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


@dataclass
class TabularMDP:
    """Dense successor/log-probability tables over an enumerated sector."""

    space: StateSpace
    succ: np.ndarray  # (M, A) indices into space
    logp: np.ndarray  # (M, A)
    reward: np.ndarray  # (M,)
    terminal: np.ndarray  # (M,) bool
    horizon: str
    reference: int
    formulation: Formulation | None = None
    model: StoquasticModel | None = field(default=None, repr=False)

    @property
    def n_states(self) -> int:
        return len(self.space)

    def transition_matrix(self) -> sp.csr_matrix:
        m, a = self.succ.shape
        p = np.exp(self.logp)
        keep = p > 0
        rows = np.broadcast_to(np.arange(m)[:, None], (m, a))[keep]
        P = sp.csr_matrix((p[keep], (rows, self.succ[keep])), shape=(m, m))
        P.sum_duplicates()
        return P

    def energy(self, R_star: float) -> float:
        return self.formulation.energy_from_rstar(R_star, self.space, self.model)


def tabulate(formulation: Formulation, model: StoquasticModel, sector=None) -> TabularMDP:
    space = sector if isinstance(sector, StateSpace) else StateSpace(model.lattice, sector)
    report = check_ergodic(model, space)
    if not report.ergodic:
        raise DegenerateGroundState(
            f"passive dynamics splits the sector into {report.n_components} components"
        )
    bits = space.bits
    succ_bits, logp = formulation.log_policy(model, bits, space)
    reachable = np.isfinite(logp)
    inside = space.contains(succ_bits)
    if np.any(reachable & ~inside):
        raise ValueError("the reference policy leaves the requested sector")
    succ = np.zeros(succ_bits.shape, dtype=np.int64)
    succ[inside] = space.index(succ_bits[inside])
    # unreachable slots point back at the state itself
    succ[~inside] = np.broadcast_to(np.arange(len(bits))[:, None], succ.shape)[~inside]
    reward = formulation.reward(model, bits, space)
    terminal = formulation.is_terminal(model, bits)
    if formulation.kind == "terminal" and not terminal.any():
        raise TerminalUnreachable("no terminal state lies inside the sector")
    reference = int(np.argmin(model.diagonal(bits)))
    return TabularMDP(
        space, succ, logp, reward, terminal, formulation.horizon, reference, formulation, model
    )


def soft_backup_U(mdp: TabularMDP, U: np.ndarray):
    """One sweep of the soft Bellman operator; returns ``(U', R*)``.

    Infinite horizon: ``R*`` is chosen so that the reference state's value
    does not move.  Terminal: terminal states are pinned at zero.
    """
    new = mdp.reward + _lse(mdp.logp + U[mdp.succ])
    if mdp.horizon == "infinite":
        R = U[mdp.reference] - new[mdp.reference]
        return new + R, float(R)
    new[mdp.terminal] = 0.0
    return new, 0.0


@dataclass
class ValueTable:
    U: np.ndarray
    R_star: float
    energy: float
    iterations: int
    change: float
    mdp: TabularMDP = field(repr=False)

    @property
    def space(self) -> StateSpace:
        return self.mdp.space

    def wavefunction(self, normalize=True) -> np.ndarray:
        z = np.exp(self.U - self.U.max())
        return z / np.linalg.norm(z) if normalize else z

    def q_table(self) -> "QTable":
        return q_table(self.mdp, self.U, self.R_star)


def _contract(step, x0, tol, max_iter, what):
    """Iterate ``x <- step(x)`` until the a-posteriori error bound drops below tol.

    The bound is ``d * rho / (1 - rho)`` with ``d`` the sup-norm change and
    ``rho`` the largest recent ratio of successive changes.
    """
    x = x0
    ratios = []
    prev = None
    extra = None
    for it in range(1, max_iter + 1):
        new, extra = step(x)
        d = float(np.max(np.abs(new - x)))
        x = new
        if not np.isfinite(d):
            raise ConvergenceFailure(f"{what} produced non-finite values")
        if prev is not None and prev > 0:
            ratios.append(d / prev)
            if len(ratios) > 20:
                ratios.pop(0)
        prev = d
        if d == 0.0:
            return x, extra, it, d
        if d < tol and len(ratios) >= 5:
            rho = max(ratios)
            if rho < 1 and d * rho / (1 - rho) < tol:
                return x, extra, it, d
    raise ConvergenceFailure(f"{what} did not converge in {max_iter} iterations")


def value_iteration(mdp: TabularMDP, tol: float = 1e-12, max_iter: int = 5_000_000) -> ValueTable:
    U0 = np.zeros(mdp.n_states)
    U, R, it, d = _contract(lambda U: soft_backup_U(mdp, U), U0, tol, max_iter, "soft value iteration")
    return ValueTable(U, R, _energy(mdp, U, R), it, d, mdp)


def _energy(mdp, U, R):
    if mdp.horizon == "infinite":
        return float(mdp.energy(R))
    z = np.exp(U - U.max())
    return variational_energy_exact(mdp.model, z, mdp.space)


def solve_tabular(formulation: Formulation, model: StoquasticModel, sector=None, tol: float = 1e-12, **kw) -> ValueTable:
    """Soft value iteration to a fixed point of the formulation's Bellman equation.

    ``energy`` of the result is ``C - exp(-R*)`` (infinite), ``R*/dt`` (fk),
    or the Rayleigh quotient of ``exp(U)`` (terminal).
    """
    return value_iteration(tabulate(formulation, model, sector), tol, **kw)


def power_iteration_desirability(mdp: TabularMDP, tol: float = 1e-12, max_iter: int = 5_000_000):
    """Solve the linear desirability equation ``z = e^r P z`` directly.

    Infinite horizon: dominant eigenvector, scaled to ``z(ref) = 1``, with
    eigenvalue ``exp(-R*)``.  Terminal: fixed point with ``z = 1`` on
    terminal states.  Returns ``(z, R*)``.
    """
    M = (sp.diags(np.exp(mdp.reward)) @ mdp.transition_matrix()).tocsr()
    ref = mdp.reference

    if mdp.horizon == "infinite":

        def step(z):
            w = M @ z
            lam = w[ref] / z[ref]
            return w / w[ref], lam

        z, lam, _, _ = _contract(step, np.ones(mdp.n_states), tol, max_iter, "desirability power iteration")
        return z, float(-np.log(lam))

    fixed = mdp.terminal

    def step(z):
        w = M @ z
        w[fixed] = 1.0
        return w, None

    z, _, _, _ = _contract(step, np.ones(mdp.n_states), tol, max_iter, "desirability iteration")
    return z, 0.0


def desirability_power_iteration(formulation: Formulation, model: StoquasticModel, sector=None, tol: float = 1e-12):
    return power_iteration_desirability(tabulate(formulation, model, sector), tol)


# ---------------------------------------------------------------------------
# Action values, policies and rates
# ---------------------------------------------------------------------------


@dataclass
class QTable:
    Q: np.ndarray  # (M, A)
    logp: np.ndarray  # (M, A)
    mdp: TabularMDP = field(repr=False)

    def wavefunction(self) -> np.ndarray:
        return wavefunction_from_Q(self.Q, self.logp)

    def policy(self) -> np.ndarray:
        return optimal_policy_from_Q(self.Q, self.logp)


def q_table(mdp: TabularMDP, U: np.ndarray, R_star: float = 0.0) -> QTable:
    """``Q(s, a) = R* + r(s) + U(a(s))``."""
    Q = R_star + mdp.reward[:, None] + U[mdp.succ]
    return QTable(Q, mdp.logp, mdp)


def log_wavefunction_from_Q(q_values, log_policy) -> np.ndarray:
    return _lse(np.atleast_2d(log_policy) + np.atleast_2d(q_values))


def wavefunction_from_Q(q_values, log_policy) -> np.ndarray:
    """``phi(s) = E_{a ~ p(.|s)} exp Q(s, a)`` row by row."""
    return np.exp(log_wavefunction_from_Q(q_values, log_policy))


def optimal_policy_from_Q(q_values, log_policy) -> np.ndarray:
    """Soft argmax ``pi(a|s) = p(a|s) exp Q(s,a) / E_p[exp Q(s, .)]``."""
    x = np.atleast_2d(log_policy) + np.atleast_2d(q_values)
    return np.exp(x - _lse(x)[:, None])


def optimal_rates(model: StoquasticModel, phi) -> DoobRates:
    """Doob-transformed rates ``Gamma(s->s') phi(s') / phi(s)``.

    ``phi`` is a callable on configuration arrays or a ``(space, values)``
    pair.
    """
    if isinstance(phi, tuple):
        space, values = phi
        values = np.asarray(values, dtype=float)
        if np.any(values <= 0):
            raise DivisionByZeroAmplitude("optimal rates need a positive wavefunction")
        from .exact import tabulated

        phi = tabulated(space, values)
    return DoobRates(model, phi)


def generator_matrix(rates: RateMap, space: StateSpace) -> np.ndarray:
    """Dense generator ``G`` (rows sum to zero) of a rate map on a sector."""
    nbrs, r = rates(space.bits)
    m = len(space)
    G = np.zeros((m, m))
    keep = r > 0
    rows = np.broadcast_to(np.arange(m)[:, None], r.shape)[keep]
    np.add.at(G, (rows, space.index(nbrs[keep])), r[keep])
    G[np.arange(m), np.arange(m)] -= G.sum(axis=1)
    return G


def stationary_distribution(rates: RateMap, space: StateSpace) -> np.ndarray:
    """Null vector of ``G^T`` normalised to a probability distribution."""
    G = generator_matrix(rates, space)
    ns = scipy.linalg.null_space(G.T)
    if ns.shape[1] != 1:
        raise DegenerateGroundState(f"generator has a {ns.shape[1]}-dimensional null space")
    pi = ns[:, 0]
    return pi / pi.sum()


def stationary_objective(model: StoquasticModel, rates: RateMap, space: StateSpace) -> float:
    """``-E_pi[V + H]`` under the stationary law of ``rates`` (exact sum)."""
    pi = stationary_distribution(rates, space)
    V = model.potential(space.bits)
    H = entropy_rates(model, rates, space.bits)
    return float(-(pi @ (V + H)))
