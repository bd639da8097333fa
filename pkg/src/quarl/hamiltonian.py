"""Transverse-field Ising and XXZ Hamiltonians in the Z basis.

Both models are stoquastic: every off-diagonal element is non-positive, so the
Hamiltonian splits as ``H = -Gamma + V`` with ``Gamma`` the generator of a
continuous-time Markov chain (the passive dynamics) and ``V`` diagonal.

The vectorised interface used by the rest of the package is

``model.diagonal(bits)``
    ``H_ss`` for an array of configurations.
``model.offdiag(bits)``
    ``(nbrs, amps)`` of shape ``(M, K)`` with one slot per elementary move
    (a flip per site for Ising, an exchange per bond for XXZ).  Slots whose
    move is unavailable hold ``nbr = s`` and ``amp = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import NonStoquastic
from .lattice import (
    Exchange,
    Flip,
    Lattice,
    SpinConfig,
    StateSpace,
    build_lattice,
)


class StoquasticModel:
    """Common machinery; subclasses define ``diagonal`` and ``offdiag``."""

    kind = "abstract"
    lattice: Lattice

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def n_moves(self) -> int:
        raise NotImplementedError

    def move(self, k: int):
        """The action occupying slot ``k`` of ``offdiag``."""
        raise NotImplementedError

    def diagonal(self, bits) -> np.ndarray:
        raise NotImplementedError

    def offdiag(self, bits):
        raise NotImplementedError

    def potential(self, bits) -> np.ndarray:
        """``V(s) = H_ss + sum_{s' != s} H_ss'``."""
        _, amps = self.offdiag(bits)
        return self.diagonal(bits) + amps.sum(axis=1)

    def passive_rates(self, bits):
        nbrs, amps = self.offdiag(bits)
        return nbrs, -amps

    def exit_rate(self, bits) -> np.ndarray:
        return -self.offdiag(bits)[1].sum(axis=1)

    def max_diagonal_bound(self) -> float:
        raise NotImplementedError

    def min_potential_bound(self) -> float:
        """A lower bound on ``min_s V(s)``, hence on the ground-state energy."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _bond_masks(lattice: Lattice):
    b = lattice.bonds
    return b[:, 0], b[:, 1]


def _anti_aligned(bits, lattice):
    bits = np.asarray(bits, dtype=np.int64)
    i, j = _bond_masks(lattice)
    return ((bits[:, None] >> i) ^ (bits[:, None] >> j)) & 1


def _zz_sum(bits, lattice):
    anti = _anti_aligned(bits, lattice)
    return lattice.n_bonds - 2 * anti.sum(axis=1)


class IsingModel(StoquasticModel):
    """``H = -J sum_<ij> Z_i Z_j - h sum_i X_i``.

    ``h`` must be positive (``h = 0`` is allowed with ``allow_degenerate``,
    for studying the classical limit; it has no passive dynamics at all).
    """

    kind = "ising"

    def __init__(self, lattice: Lattice, J: float = 1.0, h: float = 1.0, allow_degenerate=False):
        if h < 0 or (h == 0 and not allow_degenerate):
            raise NonStoquastic(f"the Ising model needs h > 0 in the Z basis, got h={h}")
        self.lattice = lattice
        self.J = float(J)
        self.h = float(h)
        self._masks = np.left_shift(np.int64(1), np.arange(lattice.n_sites, dtype=np.int64))

    def __repr__(self):
        return f"IsingModel(dims={self.lattice.dims}, periodic={self.lattice.periodic}, J={self.J}, h={self.h})"

    @property
    def n_moves(self) -> int:
        return self.n_sites

    def move(self, k):
        return Flip(int(k))

    def diagonal(self, bits):
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        return -self.J * _zz_sum(bits, self.lattice).astype(float)

    def offdiag(self, bits):
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        nbrs = bits[:, None] ^ self._masks
        amps = np.full(nbrs.shape, -self.h)
        return nbrs, amps

    def potential(self, bits):
        return self.diagonal(bits) - self.h * self.n_sites

    def max_diagonal_bound(self):
        return abs(self.J) * self.lattice.n_bonds

    def min_potential_bound(self):
        return -abs(self.J) * self.lattice.n_bonds - self.h * self.n_sites

    def to_dict(self):
        return {"model": "ising", "J": self.J, "h": self.h, **self.lattice.to_dict()}


class XXZModel(StoquasticModel):
    """``H = -sum_<ij> [J Z_i Z_j + J_perp (X_i X_j + Y_i Y_j)]``.

    ``X_i X_j + Y_i Y_j`` swaps an anti-aligned pair with amplitude 2, so the
    off-diagonal element is ``-2 J_perp`` and ``J_perp > 0`` is required.
    """

    kind = "xxz"

    def __init__(self, lattice: Lattice, J: float = 1.0, J_perp: float = 1.0, allow_degenerate=False):
        if J_perp < 0 or (J_perp == 0 and not allow_degenerate):
            raise NonStoquastic(f"the XXZ model needs J_perp > 0 in the Z basis, got {J_perp}")
        self.lattice = lattice
        self.J = float(J)
        self.J_perp = float(J_perp)
        i, j = _bond_masks(lattice)
        self._pair_masks = (np.int64(1) << i) | (np.int64(1) << j)

    def __repr__(self):
        return (
            f"XXZModel(dims={self.lattice.dims}, periodic={self.lattice.periodic}, "
            f"J={self.J}, J_perp={self.J_perp})"
        )

    @property
    def n_moves(self) -> int:
        return self.lattice.n_bonds

    def move(self, k):
        i, j = self.lattice.bonds[k]
        return Exchange(int(i), int(j))

    def diagonal(self, bits):
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        return -self.J * _zz_sum(bits, self.lattice).astype(float)

    def offdiag(self, bits):
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        anti = _anti_aligned(bits, self.lattice).astype(bool)
        nbrs = np.where(anti, bits[:, None] ^ self._pair_masks, bits[:, None])
        amps = np.where(anti, -2.0 * self.J_perp, 0.0)
        return nbrs, amps

    def max_diagonal_bound(self):
        return abs(self.J) * self.lattice.n_bonds

    def min_potential_bound(self):
        return -(abs(self.J) + 2 * self.J_perp) * self.lattice.n_bonds

    def to_dict(self):
        return {"model": "xxz", "J": self.J, "J_perp": self.J_perp, **self.lattice.to_dict()}


def model_from_dict(spec: dict) -> StoquasticModel:
    """Build a model from ``{model, J, h | J_perp, dims, periodic}``."""
    lattice = build_lattice(spec["dims"], spec.get("periodic", True))
    kind = spec.get("model", "ising").lower()
    if kind == "ising":
        return IsingModel(lattice, spec.get("J", 1.0), spec.get("h", 1.0))
    if kind in ("xxz", "xxx"):
        J = spec.get("J", 1.0)
        return XXZModel(lattice, J, spec.get("J_perp", J))
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# Per-configuration queries
# ---------------------------------------------------------------------------


def _bits(model, s):
    if isinstance(s, SpinConfig):
        if s.n_sites != model.n_sites:
            raise ValueError("configuration does not match the model's lattice")
        return np.array([s.bits], dtype=np.int64)
    return np.array([int(s)], dtype=np.int64)


def diag_element(model: StoquasticModel, s) -> float:
    return float(model.diagonal(_bits(model, s))[0])


def offdiag_row(model: StoquasticModel, s) -> list:
    """Non-zero off-diagonal elements ``[(s', H_ss'), ...]`` of row ``s``."""
    nbrs, amps = model.offdiag(_bits(model, s))
    return [
        (SpinConfig(int(b), model.n_sites), float(a))
        for b, a in zip(nbrs[0], amps[0])
        if a != 0.0
    ]


def potential(model: StoquasticModel, s) -> float:
    return float(model.potential(_bits(model, s))[0])


def passive_rates(model: StoquasticModel, s) -> list:
    return [(t, -a) for t, a in offdiag_row(model, s)]


# ---------------------------------------------------------------------------
# Whole-sector views
# ---------------------------------------------------------------------------


def hamiltonian_matrix(model: StoquasticModel, space: StateSpace) -> sp.csr_matrix:
    """Sparse Hamiltonian restricted to ``space`` (moves leaving it are dropped)."""
    bits = space.bits
    m = len(bits)
    nbrs, amps = model.offdiag(bits)
    keep = (amps != 0.0) & space.contains(nbrs)
    rows = np.broadcast_to(np.arange(m)[:, None], nbrs.shape)[keep]
    cols = space.index(nbrs[keep])
    data = amps[keep]
    diag = model.diagonal(bits)
    H = sp.csr_matrix(
        (np.concatenate([diag, data]), (np.concatenate([np.arange(m), rows]), np.concatenate([np.arange(m), cols]))),
        shape=(m, m),
    )
    H.sum_duplicates()
    return H


@dataclass(frozen=True)
class ErgodicityReport:
    n_components: int
    labels: np.ndarray

    @property
    def ergodic(self) -> bool:
        return self.n_components == 1


def check_ergodic(model: StoquasticModel, sector=None) -> ErgodicityReport:
    """Connected components of the passive-rate graph on a sector."""
    space = sector if isinstance(sector, StateSpace) else StateSpace(model.lattice, sector)
    H = hamiltonian_matrix(model, space)
    adj = H - sp.diags(H.diagonal())
    adj.eliminate_zeros()
    n, labels = connected_components(adj, directed=False)
    return ErgodicityReport(int(n), labels)
