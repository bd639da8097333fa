"""Brute-force reference solutions on enumerable sectors.

Everything here works on the full list of configurations of a sector and is
meant as ground truth for the reinforcement-learning routes: a shifted power
iteration for the ground state, the two discrete-time Markov chains whose
fixed points are the ground state, and exact local/variational energies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import (
    ConvergenceFailure,
    DegenerateGroundState,
    DivisionByZeroAmplitude,
    InvalidScale,
    InvalidShift,
    InvalidWavefunction,
    NonErgodic,
)
from .hamiltonian import StoquasticModel, check_ergodic, hamiltonian_matrix
from .lattice import SpinConfig, StateSpace


def _space(model, sector):
    if isinstance(sector, StateSpace):
        return sector
    return StateSpace(model.lattice, sector)


@dataclass
class GroundState:
    energy: float
    amplitudes: np.ndarray  # positive, sum of squares 1
    space: StateSpace
    residual: float
    iterations: int
    shift: float

    def amplitude(self, bits) -> np.ndarray:
        return self.amplitudes[self.space.index(bits)]

    def log_amplitude(self, bits) -> np.ndarray:
        return np.log(self.amplitude(bits))


def default_shift(model: StoquasticModel, space: StateSpace | None = None) -> float:
    """``max_s H_ss + 1``, exact when the sector is enumerated."""
    if space is not None:
        return float(model.diagonal(space.bits).max()) + 1.0
    return model.max_diagonal_bound() + 1.0


def ground_state_dense(
    model: StoquasticModel,
    sector=None,
    C: float | None = None,
    tol: float = 1e-12,
    residual_tol: float = 1e-11,
    max_iter: int = 1_000_000,
) -> GroundState:
    """Dominant eigenpair of ``C - H`` by power iteration.

    Iterates from the uniform vector until successive Rayleigh quotients
    differ by less than ``tol`` and ``||H phi - E phi||_inf < residual_tol``
    (``phi`` normalised to unit 2-norm).
    """
    space = _space(model, sector)
    report = check_ergodic(model, space)
    if not report.ergodic:
        raise DegenerateGroundState(
            f"passive dynamics has {report.n_components} components on this sector"
        )
    H = hamiltonian_matrix(model, space)
    if C is None:
        C = default_shift(model, space)
    elif C <= H.diagonal().max():
        raise InvalidShift(f"C={C} must exceed max H_ss={H.diagonal().max()}")

    v = np.full(len(space), 1.0 / np.sqrt(len(space)))
    energy = np.inf
    for it in range(1, max_iter + 1):
        Hv = H @ v
        new_energy = float(v @ Hv)
        residual = float(np.max(np.abs(Hv - new_energy * v)))
        if abs(new_energy - energy) < tol and residual < residual_tol:
            return GroundState(new_energy, v, space, residual, it, float(C))
        energy = new_energy
        w = C * v - Hv
        v = w / np.linalg.norm(w)
    raise ConvergenceFailure(f"power iteration did not converge in {max_iter} iterations")


# ---------------------------------------------------------------------------
# Stochastic representations of the Schroedinger equation
# ---------------------------------------------------------------------------


@dataclass
class MarkovChainSpec:
    """Transition matrix ``P`` (rows sum to one) and per-state scale factor.

    The exact ground state satisfies ``phi = scale * (P @ phi)``.
    """

    kind: str
    space: StateSpace
    P: sp.csr_matrix
    scale: np.ndarray
    normalizer: np.ndarray  # Z1 or Z2

    def fixed_point_residual(self, phi: np.ndarray) -> float:
        return float(np.max(np.abs(phi - self.scale * (self.P @ phi))))


def _offdiag_part(model, space):
    H = hamiltonian_matrix(model, space)
    diag = H.diagonal()
    off = (H - sp.diags(diag)).tocsr()
    off.eliminate_zeros()
    return diag, off


def build_p1_chain(model: StoquasticModel, C: float, E0: float, sector=None) -> MarkovChainSpec:
    """Chain that stays put with weight ``C - H_ss`` and moves with ``-H_ss'``."""
    space = _space(model, sector)
    diag, off = _offdiag_part(model, space)
    if C <= diag.max():
        raise InvalidShift(f"C={C} must exceed max H_ss={diag.max()}")
    Z1 = C - diag - np.asarray(off.sum(axis=1)).ravel()
    P = (sp.diags((C - diag) / Z1) - sp.diags(1.0 / Z1) @ off).tocsr()
    return MarkovChainSpec("p1", space, P, Z1 / (C - E0), Z1)


def build_p2_chain(model: StoquasticModel, E0: float, sector=None) -> MarkovChainSpec:
    """Chain that always moves, with probabilities ``-H_ss' / Z2(s)``."""
    space = _space(model, sector)
    diag, off = _offdiag_part(model, space)
    Z2 = -np.asarray(off.sum(axis=1)).ravel()
    if np.any(Z2 <= 0):
        raise NonErgodic("some state has no off-diagonal neighbour")
    gap = diag - E0
    if np.any(gap <= 0):
        raise InvalidScale(f"H_ss - E0 must be positive everywhere (min {gap.min():.3g})")
    P = (-(sp.diags(1.0 / Z2) @ off)).tocsr()
    return MarkovChainSpec("p2", space, P, Z2 / gap, Z2)


# ---------------------------------------------------------------------------
# Energies of trial wavefunctions
# ---------------------------------------------------------------------------


def local_energies(model: StoquasticModel, phi: Callable, bits) -> np.ndarray:
    """``(H phi)(s) / phi(s)`` for an array of configurations.

    ``phi`` maps an ``int64`` array of configurations to amplitudes.
    """
    bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
    centre = np.asarray(phi(bits), dtype=float)
    if np.any(centre == 0):
        raise DivisionByZeroAmplitude("local energy needs phi(s) != 0")
    nbrs, amps = model.offdiag(bits)
    mask = amps != 0
    neigh = np.zeros(nbrs.shape)
    if mask.any():
        neigh[mask] = phi(nbrs[mask])
    return model.diagonal(bits) + (amps * neigh).sum(axis=1) / centre


def local_energy(model: StoquasticModel, phi: Callable, s) -> float:
    bits = s.bits if isinstance(s, SpinConfig) else int(s)
    return float(local_energies(model, phi, np.array([bits]))[0])


def tabulated(space: StateSpace, values: np.ndarray) -> Callable:
    """Amplitude function backed by an array over ``space`` (zero outside)."""
    values = np.asarray(values, dtype=float)

    def phi(bits):
        bits = np.asarray(bits, dtype=np.int64)
        inside = space.contains(bits)
        out = np.zeros(bits.shape)
        out[inside] = values[space.index(bits[inside])]
        return out

    return phi


def variational_energy_exact(model: StoquasticModel, phi, sector=None) -> float:
    """``<phi|H|phi> / <phi|phi>`` by summing over the whole sector.

    ``phi`` is either an array of amplitudes over the sector or a callable.
    """
    space = _space(model, sector)
    values = np.asarray(phi(space.bits) if callable(phi) else phi, dtype=float)
    norm = float(values @ values)
    if norm == 0.0 or not np.isfinite(norm):
        raise InvalidWavefunction("wavefunction has zero (or non-finite) norm")
    H = hamiltonian_matrix(model, space)
    return float(values @ (H @ values)) / norm
