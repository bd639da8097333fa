"""Soft Q-learning of the ground state with a convolutional Q network.

The network outputs ``Q(s, flip_i)`` for every site.  The infinite-horizon
formulations also need ``Q(s, a0)`` for the trivial action; it is not learned
but closed from the flip values with the Schroedinger equation,

    exp Q(s, a0) = sum_a (-H_{s,a(s)}) exp Q(s, a) / (H_ss - E0),

using the current energy estimate.  Training follows the usual recipe of a
replay buffer, a periodically synchronised target network and one Adam step
per episode.  The loss is the batch variance of the soft Bellman residual for
the infinite-horizon formulations (the unknown average reward cancels) and
its mean square for the terminal-state formulation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..errors import InvalidScale, TimestepTooLarge, TrainingDiverged
from ..hamiltonian import IsingModel, StoquasticModel, hamiltonian_matrix
from ..lattice import StateSpace, canonical_representatives
from ..mdp import Formulation, _lse
from .adam import AdamState, adam_step
from .network import QNetwork
from .replay import ReplayBuffer

log = logging.getLogger(__name__)


def trivial_action_q(q_flips, model: StoquasticModel, bits, E0: float) -> np.ndarray:
    """``Q(s, a0)`` from the flip values, in log space."""
    bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
    q_flips = np.atleast_2d(q_flips)
    gap = model.diagonal(bits) - E0
    if np.any(gap <= 0):
        raise InvalidScale("the trivial-action closure needs H_ss > E0")
    _, amps = model.offdiag(bits)
    if np.any((amps < 0).sum(axis=1) == 0):
        raise InvalidScale("no off-diagonal elements: exp Q(s, a0) would vanish")
    with np.errstate(divide="ignore"):
        return _lse(np.log(-amps) + q_flips) - np.log(gap)


def q_trivial_action(net: QNetwork, model: StoquasticModel, s, E0: float) -> float:
    bits = np.array([getattr(s, "bits", s)], dtype=np.int64)
    return float(trivial_action_q(net.q_values(bits), model, bits, E0)[0])


def full_q(q_flips, formulation: Formulation, model, bits, E0) -> np.ndarray:
    """``(M, N + 1)`` action values with the trivial action in the last column."""
    q_flips = np.atleast_2d(q_flips)
    if formulation.uses_trivial_action:
        q0 = trivial_action_q(q_flips, model, bits, E0)
    else:
        q0 = np.zeros(len(q_flips))  # its reference probability is zero
    return np.concatenate([q_flips, q0[:, None]], axis=1)


def _check_model(model):
    if not isinstance(model, IsingModel):
        raise TypeError("the neural path supports Ising models only (one flip action per site)")


class NeuralWavefunction:
    """``phi(s) = E_{a ~ p(.|s)} exp Q(s, a)`` for a network and formulation."""

    def __init__(self, net: QNetwork, model: StoquasticModel, formulation: Formulation, E0: float):
        self.net = net
        self.model = model
        self.formulation = formulation.with_energy(E0) if formulation.kind == "terminal" else formulation
        self.E0 = float(E0)

    @property
    def n_sites(self) -> int:
        return self.model.n_sites

    def q_values(self, bits) -> np.ndarray:
        return self.net.q_values(bits)

    def log_amplitude_from_q(self, bits, q_flips) -> np.ndarray:
        _, logp = self.formulation.log_policy(self.model, bits)
        return _lse(logp + full_q(q_flips, self.formulation, self.model, bits, self.E0))

    def log_amplitude(self, bits) -> np.ndarray:
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        return self.log_amplitude_from_q(bits, self.net.q_values(bits))

    def __call__(self, bits) -> np.ndarray:
        return np.exp(self.log_amplitude(bits))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


@dataclass
class LossResult:
    loss: float
    grads: dict
    residual: np.ndarray


def bellman_residual_loss(batch: dict, net: QNetwork, target_net: QNetwork, model, formulation: Formulation, E0: float) -> LossResult:
    """Soft Bellman residual loss and its parameter gradients.

    ``residual = Q(s,a) - r(s) - log E_{a'~p(.|s')} exp Qbar(s', a')`` with the
    inner expectation taken exactly over all actions at ``s' = a(s)``.
    """
    s, a, s_next = batch["s"], batch["a"], batch["s_next"]
    n = model.n_sites
    b = len(s)
    if formulation.kind == "terminal":
        formulation = formulation.with_energy(E0)
    q_s, cache = net.forward_cached(s)
    rows = np.arange(b)
    is_stay = a == n
    q_sa = q_s[rows, np.minimum(a, n - 1)]
    d_qsa = np.zeros((b, n))
    d_qsa[rows[~is_stay], a[~is_stay]] = 1.0
    if is_stay.any():
        if not formulation.uses_trivial_action:
            raise ValueError("the terminal formulation has no trivial action")
        q0 = trivial_action_q(q_s[is_stay], model, s[is_stay], E0)
        q_sa = np.where(is_stay, 0.0, q_sa)
        q_sa[is_stay] = q0
        # d q0 / d q_i is the softmax of log(-H_si) + q_i
        _, amps = model.offdiag(s[is_stay])
        with np.errstate(divide="ignore"):
            x = np.log(-amps) + q_s[is_stay]
        d_qsa[is_stay] = np.exp(x - _lse(x)[:, None])

    q_next = target_net.q_values(s_next)
    _, logp = formulation.log_policy(model, s_next)
    v_next = _lse(logp + full_q(q_next, formulation, model, s_next, E0))
    v_next[formulation.is_terminal(model, s_next)] = 0.0
    reward = formulation.reward(model, s)
    residual = q_sa - reward - v_next
    if formulation.kind == "terminal":
        loss = float(np.mean(residual**2))
        d_res = 2.0 * residual / b
    else:
        centred = residual - residual.mean()
        loss = float(np.mean(centred**2))
        d_res = 2.0 * centred / b
    grads = net.backward(cache, d_res[:, None] * d_qsa)
    return LossResult(loss, grads, residual)


# ---------------------------------------------------------------------------
# Energy validation
# ---------------------------------------------------------------------------


class ExactEnergyValidator:
    """Variational energy by summing over all ``2^N`` configurations.

    On periodic lattices the network's wavefunction is translation
    invariant, so it is evaluated on one representative per orbit only.
    """

    def __init__(self, model: StoquasticModel):
        self.model = model
        self.space = StateSpace(model.lattice)
        self.H = hamiltonian_matrix(model, self.space)
        if model.lattice.fully_periodic:
            self.reps, self.inverse = canonical_representatives(self.space.bits, model.lattice)
        else:
            self.reps, self.inverse = self.space.bits, np.arange(len(self.space))

    def log_amplitudes(self, wavefunction: NeuralWavefunction) -> np.ndarray:
        return wavefunction.log_amplitude(self.reps)[self.inverse]

    def __call__(self, wavefunction: NeuralWavefunction) -> float:
        la = self.log_amplitudes(wavefunction)
        phi = np.exp(la - la.max())
        return float(phi @ (self.H @ phi) / (phi @ phi))


class MonteCarloEnergyValidator:
    def __init__(self, model, n_chains=64, n_steps=400, burn_in=100, seed=0):
        self.model = model
        self.kw = dict(n_chains=n_chains, n_steps=n_steps, burn_in=burn_in)
        self.seed = seed
        self._calls = 0

    def __call__(self, wavefunction) -> float:
        from ..sampling import QSingleFlip, variational_energy_mc

        self._calls += 1
        res = variational_energy_mc(
            self.model, wavefunction, QSingleFlip(), seed=(self.seed, self._calls), **self.kw
        )
        return res.energy


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    formulation: str = "terminal"
    episodes: int = 4500
    lr: float = 1e-3
    lr_decay: float = 0.99
    lr_decay_interval: int = 10
    batch_size: int = 4096
    buffer_size: int = 65536
    target_update: int = 20
    validation_interval: int = 20
    dt: float = 1e-4
    C: float | None = None
    channels: int = 64
    hidden_layers: int = 3
    seed: int = 0
    validation: str = "auto"  # auto | exact | mc
    enumeration_cap: int = 20

    def __post_init__(self):
        positive = ["episodes", "lr", "batch_size", "buffer_size", "target_update",
                    "validation_interval", "dt", "channels", "hidden_layers", "lr_decay_interval"]
        for name in positive:
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.batch_size > self.buffer_size:
            raise ValueError("batch_size cannot exceed buffer_size")
        if self.formulation not in ("fk", "infinite", "terminal"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.validation not in ("auto", "exact", "mc"):
            raise ValueError(f"unknown validation mode {self.validation!r}")

    def make_formulation(self) -> Formulation:
        return Formulation(self.formulation, dt=self.dt, C=self.C)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    net: QNetwork
    config: TrainConfig
    formulation: Formulation
    E0_estimate: float
    log: list = field(default_factory=list)

    @property
    def final_energy(self) -> float:
        vals = [row["E_var"] for row in self.log if np.isfinite(row["E_var"])]
        return vals[-1] if vals else float("nan")

    def wavefunction(self, model) -> NeuralWavefunction:
        return NeuralWavefunction(self.net, model, self.formulation, self.E0_estimate)


def diagonal_floor(model: IsingModel) -> float:
    """Lower bound on ``H_ss``: every bond satisfied."""
    return -abs(model.J) * model.lattice.n_bonds


def random_half_up(n_sites: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Configurations with a random half of the sites up."""
    keys = rng.random((count, n_sites))
    up = np.argsort(keys, axis=1)[:, : n_sites // 2]
    return (np.int64(1) << up.astype(np.int64)).sum(axis=1)


def _sample_rows(probs, rng):
    cum = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cum[:, -1]
    return np.minimum((cum <= u[:, None]).sum(axis=1), probs.shape[1] - 1)


def _step(bits, actions, n_sites):
    flip = actions < n_sites
    out = bits.copy()
    out[flip] ^= np.int64(1) << actions[flip]
    return out


def make_validator(model, config: TrainConfig):
    mode = config.validation
    if mode == "auto":
        mode = "exact" if model.n_sites <= config.enumeration_cap else "mc"
    if mode == "exact":
        return ExactEnergyValidator(model)
    return MonteCarloEnergyValidator(model, seed=config.seed)


def train_soft_q(
    config: TrainConfig,
    model: StoquasticModel,
    callback: Callable | None = None,
    validator=None,
) -> TrainResult:
    """Train a Q network by soft Q-learning; returns the network and its log.

    Every ``validation_interval`` episodes the variational energy of the
    current wavefunction is computed and becomes the energy estimate used in
    the trivial-action closure and the terminal-state reward.
    """
    _check_model(model)
    formulation = config.make_formulation()
    n = model.n_sites
    if formulation.kind == "fk" and config.dt * model.exit_rate(np.array([0]))[0] >= 1:
        raise TimestepTooLarge("dt * h * N must be below one")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(seeds[1])
    net = QNetwork(model.lattice, config.channels, config.hidden_layers, seed=seeds[0])
    target = net.copy()
    opt = AdamState()
    buffer = ReplayBuffer(config.buffer_size)
    validator = validator or make_validator(model, config)
    E0 = float(model.min_potential_bound())
    # the closure and the terminal reward need E0 < H_ss everywhere
    floor = diagonal_floor(model) - 1e-9 * max(1.0, abs(E0))
    lr = config.lr
    n_actions = n + 1 if formulation.uses_trivial_action else n

    def current(E):
        return formulation.with_energy(E) if formulation.kind == "terminal" else formulation

    walkers = random_half_up(n, config.batch_size, rng)

    def push(bits, actions, E):
        nxt = _step(bits, actions, n)
        f = current(E)
        # walkers run on through terminal states; only the bootstrap stops there
        buffer.push(bits, actions, f.reward(model, bits), nxt, f.is_terminal(model, nxt))
        return nxt

    while not buffer.full:
        actions = rng.integers(0, n_actions, size=len(walkers))
        walkers = push(walkers, actions, E0)

    result = TrainResult(net, config, formulation, E0)
    last_good = {k: v.copy() for k, v in net.params.items()}
    t_start = time.perf_counter()
    for episode in range(config.episodes):
        f = current(E0)
        q_w = net.q_values(walkers)
        _, logp = f.log_policy(model, walkers)
        logits = logp + full_q(q_w, f, model, walkers, E0)
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        walkers = push(walkers, _sample_rows(probs, rng), E0)

        batch = buffer.sample(config.batch_size, rng)
        out = bellman_residual_loss(batch, net, target, model, f, E0)
        if not np.isfinite(out.loss) or not all(np.all(np.isfinite(g)) for g in out.grads.values()):
            raise TrainingDiverged(f"non-finite loss at episode {episode}", checkpoint=last_good, episode=episode)
        last_good = {k: v.copy() for k, v in net.params.items()}
        adam_step(net.params, out.grads, opt, lr)

        if (episode + 1) % config.target_update == 0:
            target = net.copy()
        if (episode + 1) % config.lr_decay_interval == 0:
            lr *= config.lr_decay

        E_var = float("nan")
        if episode % config.validation_interval == 0 or episode == config.episodes - 1:
            E_var = validator(NeuralWavefunction(net, model, formulation, E0))
            if not np.isfinite(E_var):
                raise TrainingDiverged(f"non-finite energy at episode {episode}", checkpoint=last_good, episode=episode)
            E0 = min(E_var, floor)
        row = {"episode": episode, "loss": out.loss, "E_var": E_var, "E0_est": E0, "lr": lr}
        result.log.append(row)
        if callback is not None:
            callback(row)
        if np.isfinite(E_var):
            log.info("episode %d loss %.3e E_var %.6f (%.1fs)", episode, out.loss, E_var, time.perf_counter() - t_start)
    result.E0_estimate = E0
    return result
