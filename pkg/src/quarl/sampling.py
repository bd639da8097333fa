"""Metropolis-Hastings sampling of ``phi^2`` and autocorrelation analysis.

Three proposal kinds are supported: a uniformly chosen single flip, a single
flip drawn from ``softmax(Q(s, .))`` and ``k`` distinct flips drawn
sequentially without replacement from the same distribution.  The Q-guided
proposals are asymmetric, so the acceptance ratio always carries the Hastings
factor ``q(s | s') / q(s' | s)``.

For the multi-flip proposal the ordering in which the sites were drawn is
treated as an auxiliary variable: the reverse move is evaluated as the same
ordered draw from ``s'``.  Detailed balance then holds for every ordering
separately, which keeps ``phi^2`` stationary without summing over ``k!``
permutations.

Chains run in lockstep as numpy vectors.  Each chain draws its random numbers
from its own counter-based stream, so results do not depend on how many
chains run together.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateSeries, InvalidWavefunction, SamplerStuck
from .fk_sim import counter_uniforms
from .hamiltonian import StoquasticModel
from .lattice import StateSpace

# random slots reserved per chain and step; bounds k + 1
_STRIDE = 128


# ---------------------------------------------------------------------------
# Wavefunctions
# ---------------------------------------------------------------------------


class TabulatedWavefunction:
    """Amplitudes (and optionally flip Q-values) stored over a state space.

    Without an explicit Q table, ``Q(s, i) = log phi(flip_i(s))``, the
    action values of the exact tabular solution up to a per-state constant.
    """

    def __init__(self, space: StateSpace, amplitudes=None, q_table=None, log_amplitudes=None):
        self.space = space
        if log_amplitudes is None:
            amp = np.asarray(amplitudes, dtype=float)
            with np.errstate(divide="ignore"):
                log_amplitudes = np.log(amp)
        self.log_table = np.asarray(log_amplitudes, dtype=float)
        if len(self.log_table) != len(space):
            raise InvalidWavefunction("amplitude table does not match the state space")
        self.q_table = None if q_table is None else np.asarray(q_table, dtype=float)
        self.n_sites = space.n_sites

    @classmethod
    def from_wavefunction(cls, wf, space: StateSpace, chunk: int = 8192) -> "TabulatedWavefunction":
        """Evaluate ``wf`` once on every state of ``space``."""
        logs, qs = [], []
        for start in range(0, len(space), chunk):
            lp, q = evaluate(wf, space.bits[start : start + chunk], need_q=hasattr(wf, "q_values"))
            logs.append(lp)
            qs.append(q)
        q_table = np.concatenate(qs) if qs and qs[0] is not None else None
        return cls(space, log_amplitudes=np.concatenate(logs), q_table=q_table)

    def log_amplitude(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        out = np.full(bits.shape, -np.inf)
        inside = self.space.contains(bits)
        out[inside] = self.log_table[self.space.index(bits[inside])]
        return out

    def __call__(self, bits) -> np.ndarray:
        return np.exp(self.log_amplitude(bits))

    def q_values(self, bits) -> np.ndarray:
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        if self.q_table is not None:
            return self.q_table[self.space.index(bits)]
        flips = bits[:, None] ^ (np.int64(1) << np.arange(self.n_sites, dtype=np.int64))
        return self.log_amplitude(flips)


class _CallableWavefunction:
    def __init__(self, phi):
        self.phi = phi

    def log_amplitude(self, bits):
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.phi(bits), dtype=float))


def as_wavefunction(wf):
    """Accept objects with ``log_amplitude`` or plain amplitude callables."""
    return wf if hasattr(wf, "log_amplitude") else _CallableWavefunction(wf)


def evaluate(wf, bits, need_q: bool):
    """``(log phi, Q or None)`` at ``bits`` using one network call when possible."""
    bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
    if need_q and hasattr(wf, "log_amplitude_from_q"):
        q = wf.q_values(bits)
        return wf.log_amplitude_from_q(bits, q), q
    lp = as_wavefunction(wf).log_amplitude(bits)
    return lp, (wf.q_values(bits) if need_q else None)


# ---------------------------------------------------------------------------
# Proposals
# ---------------------------------------------------------------------------


def _log_softmax(q):
    q = np.asarray(q, dtype=float)
    m = q.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return q - m - np.log(np.exp(q - m).sum(axis=-1, keepdims=True))


class UniformSingleFlip:
    k = 1
    needs_q = False
    name = "uniform"

    def sample(self, q, u, n_sites):
        sites = np.minimum((u[:, :1] * n_sites).astype(np.int64), n_sites - 1)
        return sites, np.full(len(u), -np.log(n_sites))

    def log_prob(self, q, sites, n_sites):
        return np.full(len(sites), -np.log(n_sites))

    def orderings(self, n_sites):
        return [(i,) for i in range(n_sites)]


class QMultiFlip:
    """``k`` distinct sites, drawn one after another from ``softmax(Q)``."""

    needs_q = True

    def __init__(self, k: int = 2):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.k = int(k)
        self.name = f"qk:{self.k}"

    def sample(self, q, u, n_sites):
        if self.k > n_sites:
            raise ValueError(f"cannot flip {self.k} of {n_sites} sites")
        logits = np.array(q, dtype=float)
        rows = np.arange(len(logits))
        sites = np.empty((len(logits), self.k), dtype=np.int64)
        logq = np.zeros(len(logits))
        for j in range(self.k):
            lp = _log_softmax(logits)
            cum = np.cumsum(np.exp(lp), axis=1)
            pick = np.minimum((cum <= u[:, j : j + 1] * cum[:, -1:]).sum(axis=1), n_sites - 1)
            # guard against rounding onto an already-used site
            pick = np.where(np.isfinite(lp[rows, pick]), pick, np.argmax(lp, axis=1))
            sites[:, j] = pick
            logq += lp[rows, pick]
            logits[rows, pick] = -np.inf
        return sites, logq

    def log_prob(self, q, sites, n_sites):
        logits = np.array(q, dtype=float)
        rows = np.arange(len(logits))
        logq = np.zeros(len(logits))
        for j in range(sites.shape[1]):
            lp = _log_softmax(logits)
            logq += lp[rows, sites[:, j]]
            logits[rows, sites[:, j]] = -np.inf
        return logq

    def orderings(self, n_sites):
        return list(itertools.permutations(range(n_sites), self.k))


class QSingleFlip(QMultiFlip):
    def __init__(self):
        super().__init__(1)
        self.name = "q1"


def parse_proposal(text: str):
    """``uniform``, ``q1`` or ``qk:<k>``."""
    if text == "uniform":
        return UniformSingleFlip()
    if text == "q1":
        return QSingleFlip()
    if text.startswith("qk:"):
        return QMultiFlip(int(text[3:]))
    raise ValueError(f"unknown proposal {text!r}")


def proposal_distribution(proposal, q_row, n_sites: int) -> dict:
    """Probability of every ordered site tuple from one state."""
    orders = proposal.orderings(n_sites)
    sites = np.array(orders, dtype=np.int64)
    q = np.broadcast_to(np.asarray(q_row, dtype=float), (len(orders), n_sites))
    probs = np.exp(proposal.log_prob(q, sites, n_sites))
    return dict(zip(orders, probs))


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------


class ChainStreams:
    """Independent counter-based uniform streams, one per chain."""

    def __init__(self, seed: int, n_chains: int, first_chain: int = 0):
        self.seed = int(seed)
        self.ids = np.arange(first_chain, first_chain + n_chains, dtype=np.uint64)
        self.step = 0

    def uniforms(self, n: int) -> np.ndarray:
        if n > _STRIDE:
            raise ValueError("too many random numbers per step")
        base = self.step * _STRIDE
        self.step += 1
        cols = [counter_uniforms(self.seed, self.ids, base + j // 4, j % 4) for j in range(n)]
        return np.stack(cols, axis=1)


def _uniforms(rng, n_chains, n):
    if isinstance(rng, ChainStreams):
        return rng.uniforms(n)
    return rng.random((n_chains, n))


@dataclass
class ChainState:
    bits: np.ndarray
    log_phi: np.ndarray
    q: np.ndarray | None = None

    @classmethod
    def start(cls, wf, bits, proposal) -> "ChainState":
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        lp, q = evaluate(wf, bits, proposal.needs_q)
        if not np.all(np.isfinite(lp)):
            raise InvalidWavefunction("phi must be positive at the initial states")
        return cls(bits, lp, q)


def _flip_mask(sites):
    return np.bitwise_or.reduce(np.int64(1) << sites, axis=1)


def mh_step(state: ChainState, wf, proposal, rng, n_sites: int | None = None):
    """Advance every chain by one Metropolis-Hastings step.

    Returns the new :class:`ChainState` and a boolean acceptance mask.
    """
    if n_sites is None:
        n_sites = wf.n_sites if hasattr(wf, "n_sites") else wf.net.lattice.n_sites
    c = len(state.bits)
    u = _uniforms(rng, c, proposal.k + 1)
    sites, logq_fwd = proposal.sample(state.q, u, n_sites)
    new_bits = state.bits ^ _flip_mask(sites)
    lp_new, q_new = evaluate(wf, new_bits, proposal.needs_q)
    logq_rev = proposal.log_prob(q_new, sites, n_sites)
    with np.errstate(invalid="ignore"):
        log_ratio = 2.0 * (lp_new - state.log_phi) + logq_rev - logq_fwd
    accept = np.log(u[:, -1]) < np.nan_to_num(log_ratio, nan=-np.inf)
    bits = np.where(accept, new_bits, state.bits)
    lp = np.where(accept, lp_new, state.log_phi)
    q = None if state.q is None else np.where(accept[:, None], q_new, state.q)
    return ChainState(bits, lp, q), accept


def mh_transition_matrix(wf, proposal, space: StateSpace):
    """Exact MH transition matrix over ``space`` and the target ``pi ~ phi^2``."""
    n = space.n_sites
    wf = as_wavefunction(wf)
    lp_all, q_all = evaluate(wf, space.bits, proposal.needs_q)
    orders = np.array(proposal.orderings(n), dtype=np.int64)
    P = np.zeros((len(space), len(space)))
    for i, s in enumerate(space.bits):
        q = None if q_all is None else np.broadcast_to(q_all[i], (len(orders), n))
        logq_fwd = proposal.log_prob(q, orders, n)
        targets = s ^ _flip_mask(orders)
        inside = space.contains(targets)
        t_idx = space.index(targets[inside])
        q_rev = None if q_all is None else q_all[t_idx]
        logq_rev = proposal.log_prob(q_rev, orders[inside], n)
        ratio = 2.0 * (lp_all[t_idx] - lp_all[i]) + logq_rev - logq_fwd[inside]
        acc = np.exp(np.minimum(ratio, 0.0))
        np.add.at(P[i], t_idx, np.exp(logq_fwd[inside]) * acc)
        P[i, i] += 1.0 - P[i].sum()
    pi = np.exp(2.0 * (lp_all - lp_all.max()))
    return P, pi / pi.sum()


# ---------------------------------------------------------------------------
# Autocorrelation
# ---------------------------------------------------------------------------


@dataclass
class AutocorrelationTime:
    tau: float
    tau_int: float
    flag: str  # "ok", "uncorrelated" or "below-threshold"
    acf: np.ndarray = field(repr=False)

    def __float__(self) -> float:
        return self.tau


def autocorrelation_function(series, max_lag: int | None = None) -> np.ndarray:
    """Normalised ACF of one series or of several (time along the last axis).

    Several chains are combined by pooling their autocovariances.
    """
    x = np.atleast_2d(np.asarray(series, dtype=float))
    x = x - x.mean(axis=1, keepdims=True)
    n = x.shape[1]
    var = np.sum(x * x)
    if var <= 1e-300 * x.size or not np.isfinite(var):
        raise DegenerateSeries("series is constant")
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n].sum(axis=0)
    acf = acov / acov[0]
    return acf[: (max_lag or n)]


def autocorrelation_time(series, threshold: float = 0.05, max_lag: int | None = None) -> AutocorrelationTime:
    """Exponential decay time of the ACF, with the integrated time alongside.

    ``tau`` comes from a weighted least-squares fit of ``log ACF(t) = a - t/tau``
    over the initial lags where ``ACF > threshold``.  ``tau_int`` is
    ``1/2 + sum ACF(t)`` over a self-consistent window, which also equals
    ``tau`` for a pure exponential.
    """
    acf = autocorrelation_function(series, max_lag)
    n = len(acf)
    # self-consistent summation window
    tau_int = 0.5
    for w in range(1, n):
        tau_int += acf[w]
        if w >= 5 * tau_int:
            break
    tau_int = max(tau_int, 0.0)
    if n < 2 or acf[1] <= 0:
        return AutocorrelationTime(0.0, tau_int, "uncorrelated", acf)
    below = np.flatnonzero(acf[1:] <= threshold)
    stop = below[0] + 1 if below.size else n
    lags = np.arange(1, stop)
    if lags.size == 0:
        return AutocorrelationTime(0.0, tau_int, "below-threshold", acf)
    y = np.log(acf[lags])
    w = acf[lags] ** 2  # var(log acf) ~ 1 / acf^2
    if lags.size == 1:
        slope = y[0] / lags[0]
    else:
        slope = np.polyfit(lags, y, 1, w=np.sqrt(w))[0]
    tau = -1.0 / slope if slope < 0 else np.inf
    return AutocorrelationTime(float(tau), float(tau_int), "ok", acf)


# ---------------------------------------------------------------------------
# Variational energy
# ---------------------------------------------------------------------------


@dataclass
class ChainStats:
    n_samples: int
    acceptance_rate: float
    tau: float
    tau_int: float
    tau_flag: str
    energy: float
    std_error: float
    n_chains: int
    proposal: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MCResult:
    energy: float
    std_error: float
    stats: ChainStats
    local_energy: np.ndarray = field(repr=False)  # (n_steps, n_chains)
    potential: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter((self.energy, self.std_error, self.stats))


def local_energies_log(model: StoquasticModel, wf, bits) -> np.ndarray:
    """``(H phi)(s) / phi(s)`` from log amplitudes, evaluated on unique states."""
    bits = np.asarray(bits, dtype=np.int64)
    uniq, inv = np.unique(bits, return_inverse=True)
    nbrs, amps = model.offdiag(uniq)
    pts, pinv = np.unique(np.concatenate([uniq, nbrs.ravel()]), return_inverse=True)
    lp = as_wavefunction(wf).log_amplitude(pts)
    centre = lp[pinv[: len(uniq)]]
    if not np.all(np.isfinite(centre)):
        raise InvalidWavefunction("phi vanishes at a sampled state")
    ratio = np.exp(lp[pinv[len(uniq) :]].reshape(nbrs.shape) - centre[:, None])
    e = model.diagonal(uniq) + np.where(amps != 0, amps * ratio, 0.0).sum(axis=1)
    return e[inv].reshape(bits.shape)


def _tau_or_zero(series):
    try:
        return autocorrelation_time(series)
    except DegenerateSeries:
        return AutocorrelationTime(0.0, 0.0, "constant", np.ones(1))


def run_chains(wf, proposal, n_sites, n_steps, burn_in, seed, n_chains, s0=None):
    """Run ``n_chains`` chains; returns ``(samples (n_steps, C), acceptance)``."""
    streams = ChainStreams(seed, n_chains)
    if s0 is None:
        u = streams.uniforms(n_sites)
        s0 = ((u < 0.5).astype(np.int64) << np.arange(n_sites, dtype=np.int64)).sum(axis=1)
    state = ChainState.start(wf, np.broadcast_to(s0, (n_chains,)).copy(), proposal)
    samples = np.empty((n_steps, n_chains), dtype=np.int64)
    accepted = 0
    for step in range(burn_in + n_steps):
        state, acc = mh_step(state, wf, proposal, streams, n_sites)
        if step >= burn_in:
            samples[step - burn_in] = state.bits
            accepted += int(acc.sum())
    return samples, accepted / (n_steps * n_chains)


def variational_energy_mc(
    model: StoquasticModel,
    wf,
    proposal=None,
    n_steps: int = 2000,
    burn_in: int | None = None,
    seed: int = 0,
    n_chains: int = 16,
    s0=None,
) -> MCResult:
    """Mean local energy over MH chains targeting ``phi^2``.

    The standard error uses the effective sample size ``n / (1 + 2 tau)``
    with ``tau`` the integrated autocorrelation time of the local energy.
    ``burn_in`` defaults to ``10 N`` steps per chain.
    """
    proposal = proposal or UniformSingleFlip()
    n = model.n_sites
    burn_in = 10 * n if burn_in is None else int(burn_in)
    if n_steps <= 0 or burn_in < 0:
        raise ValueError("n_steps must be positive and burn_in non-negative")
    if isinstance(seed, tuple):
        seed = int(np.random.SeedSequence(list(seed)).generate_state(1, np.uint64)[0])
    wf = as_wavefunction(wf)
    samples, acceptance = run_chains(wf, proposal, n, n_steps, burn_in, seed, n_chains, s0)
    if acceptance == 0.0:
        raise SamplerStuck("no proposal was accepted")
    e_loc = local_energies_log(model, wf, samples)
    pot = model.potential(samples.ravel()).reshape(samples.shape)
    tau_v = _tau_or_zero(pot.T)
    tau_e = _tau_or_zero(e_loc.T)
    energy = float(e_loc.mean())
    n_eff = e_loc.size / (1.0 + 2.0 * max(tau_e.tau_int, tau_e.tau, 0.0))
    err = float(np.sqrt(e_loc.var() / n_eff))
    stats = ChainStats(
        n_samples=int(e_loc.size),
        acceptance_rate=float(acceptance),
        tau=float(tau_v.tau),
        tau_int=float(tau_v.tau_int),
        tau_flag=tau_v.flag,
        energy=energy,
        std_error=err,
        n_chains=int(n_chains),
        proposal=proposal.name,
    )
    return MCResult(energy, err, stats, e_loc, pot)


def state_histogram(samples, space: StateSpace) -> np.ndarray:
    counts = np.bincount(space.index(np.ravel(samples)), minlength=len(space))
    return counts / counts.sum()


__all__ = [
    "AutocorrelationTime",
    "ChainState",
    "ChainStats",
    "ChainStreams",
    "MCResult",
    "QMultiFlip",
    "QSingleFlip",
    "TabulatedWavefunction",
    "UniformSingleFlip",
    "autocorrelation_function",
    "autocorrelation_time",
    "local_energies_log",
    "mh_step",
    "mh_transition_matrix",
    "parse_proposal",
    "proposal_distribution",
    "run_chains",
    "state_histogram",
    "variational_energy_mc",
]
