"""Lattice geometry, spin configurations and actions.

Configurations are bit-sets packed into 64-bit integers: bit ``i`` set means
spin ``i`` is up (``Z_i = +1``).  Sites are numbered row-major, so on a lattice
with ``dims = (Ly, Lx)`` the site at row ``y`` and column ``x`` is
``y * Lx + x``.  Most routines come in a scalar flavour working on
:class:`SpinConfig` and a vectorised flavour working on ``int64`` arrays of
bit patterns.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Sequence, Union

import numpy as np

from .errors import (
    InvalidAction,
    InvalidLattice,
    StateSpaceTooLarge,
    SymmetryUnavailable,
)

MAX_SITES = 64
ENUMERATION_CAP = 20


@dataclass(frozen=True)
class Lattice:
    """A 1D chain or 2D square lattice.

    Use :func:`build_lattice` rather than constructing this directly.
    """

    dims: tuple
    periodic: tuple
    bonds: np.ndarray = field(repr=False, compare=False)
    neighbors: tuple = field(repr=False, compare=False)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def fully_periodic(self) -> bool:
        return all(self.periodic)

    def coords(self, site: int) -> tuple:
        return tuple(int(c) for c in np.unravel_index(site, self.dims))

    def site(self, coords: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(coords), self.dims))

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "periodic": list(self.periodic)}


def build_lattice(dims, periodic=True) -> Lattice:
    """Build a chain (``dims=[L]``) or square lattice (``dims=[Ly, Lx]``).

    ``periodic`` may be a single flag or one flag per dimension.  Bonds are
    listed once per unordered pair ``(i, j)`` with ``i < j``.
    """
    dims = tuple(int(d) for d in np.atleast_1d(dims))
    if not 1 <= len(dims) <= 2:
        raise InvalidLattice(f"only 1D and 2D lattices are supported, got dims={dims}")
    if any(d < 2 for d in dims):
        raise InvalidLattice(f"every extent must be >= 2, got dims={dims}")
    if isinstance(periodic, (bool, np.bool_)):
        periodic = (bool(periodic),) * len(dims)
    periodic = tuple(bool(p) for p in periodic)
    if len(periodic) != len(dims):
        raise InvalidLattice("need one periodic flag per dimension")
    n = int(np.prod(dims))
    if n > MAX_SITES:
        raise InvalidLattice(f"at most {MAX_SITES} sites are supported, got {n}")

    pairs = set()
    for site in range(n):
        c = np.unravel_index(site, dims)
        for axis in range(len(dims)):
            nxt = list(c)
            nxt[axis] += 1
            if nxt[axis] == dims[axis]:
                if not periodic[axis]:
                    continue
                nxt[axis] = 0
            other = int(np.ravel_multi_index(tuple(nxt), dims))
            if other != site:
                pairs.add((min(site, other), max(site, other)))
    bonds = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    bonds.setflags(write=False)
    nbrs = [[] for _ in range(n)]
    for i, j in bonds:
        nbrs[i].append(int(j))
        nbrs[j].append(int(i))
    neighbors = tuple(tuple(sorted(x)) for x in nbrs)
    return Lattice(dims=dims, periodic=periodic, bonds=bonds, neighbors=neighbors)


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpinConfig:
    """One basis state of ``n_sites`` spins packed into an integer."""

    bits: int
    n_sites: int

    def __post_init__(self):
        if not 1 <= self.n_sites <= MAX_SITES:
            raise ValueError(f"n_sites must be in [1, {MAX_SITES}]")
        if self.bits < 0 or self.bits >> self.n_sites:
            raise ValueError("bits beyond n_sites must be zero")

    def spin(self, i: int) -> int:
        return 1 if (self.bits >> i) & 1 else -1

    def spins(self) -> np.ndarray:
        return bits_to_spins(np.array([self.bits], dtype=np.int64), self.n_sites)[0]

    @property
    def n_up(self) -> int:
        return bin(self.bits).count("1")

    @property
    def magnetization(self) -> int:
        return 2 * self.n_up - self.n_sites

    def to_string(self) -> str:
        return "".join("+" if (self.bits >> i) & 1 else "-" for i in range(self.n_sites))

    @classmethod
    def from_string(cls, text: str) -> "SpinConfig":
        text = text.strip()
        if not text or set(text) - {"+", "-"}:
            raise ValueError(f"config string must consist of '+' and '-', got {text!r}")
        bits = sum(1 << i for i, ch in enumerate(text) if ch == "+")
        return cls(bits, len(text))

    @classmethod
    def from_spins(cls, spins) -> "SpinConfig":
        spins = np.asarray(spins).ravel()
        return cls(int(spins_to_bits(spins[None, :])[0]), spins.size)

    def __str__(self) -> str:
        return self.to_string()


def bits_to_spins(bits: np.ndarray, n_sites: int) -> np.ndarray:
    """Unpack ``(M,)`` bit patterns into an ``(M, n_sites)`` array of +-1."""
    bits = np.asarray(bits, dtype=np.int64)
    shifts = np.arange(n_sites, dtype=np.int64)
    up = (bits[..., None] >> shifts) & 1
    return (2 * up - 1).astype(np.int8)


def spins_to_bits(spins: np.ndarray) -> np.ndarray:
    spins = np.asarray(spins)
    n = spins.shape[-1]
    weights = np.left_shift(np.int64(1), np.arange(n, dtype=np.int64))
    return ((spins > 0).astype(np.int64) * weights).sum(axis=-1)


def popcount(bits: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(bits, dtype=np.int64)).astype(np.int64)


def magnetization(bits: np.ndarray, n_sites: int) -> np.ndarray:
    return 2 * popcount(bits) - n_sites


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Flip:
    site: int


@dataclass(frozen=True)
class Exchange:
    i: int
    j: int


@dataclass(frozen=True)
class Stay:
    """The trivial action ``a0(s) = s``."""


ActionId = Union[Flip, Exchange, Stay]


def apply_action(s: SpinConfig, a: ActionId) -> SpinConfig:
    if isinstance(a, Stay):
        return s
    if isinstance(a, Flip):
        if not 0 <= a.site < s.n_sites:
            raise InvalidAction(f"site {a.site} out of range for {s.n_sites} sites")
        return SpinConfig(s.bits ^ (1 << a.site), s.n_sites)
    if isinstance(a, Exchange):
        if not (0 <= a.i < s.n_sites and 0 <= a.j < s.n_sites) or a.i == a.j:
            raise InvalidAction(f"bad exchange bond ({a.i}, {a.j})")
        if s.spin(a.i) == s.spin(a.j):
            raise InvalidAction("exchange needs opposite spins on the bond")
        return SpinConfig(s.bits ^ ((1 << a.i) | (1 << a.j)), s.n_sites)
    raise InvalidAction(f"unknown action {a!r}")


# ---------------------------------------------------------------------------
# State spaces
# ---------------------------------------------------------------------------


def enumerate_states(lattice_or_n, sector=None, cap=ENUMERATION_CAP) -> np.ndarray:
    """All configurations, or those with magnetization ``sector``, ascending."""
    n = lattice_or_n.n_sites if isinstance(lattice_or_n, Lattice) else int(lattice_or_n)
    if n > cap:
        raise StateSpaceTooLarge(f"{n} sites exceeds the enumeration cap of {cap}")
    if sector is None:
        return np.arange(1 << n, dtype=np.int64)
    sector = int(sector)
    if abs(sector) > n or (sector + n) % 2:
        return np.zeros(0, dtype=np.int64)
    n_up = (sector + n) // 2
    # combinations are generated in lexicographic order of site sets, not of bit values
    out = np.fromiter(
        (sum(1 << i for i in c) for c in itertools.combinations(range(n), n_up)),
        dtype=np.int64,
        count=comb(n, n_up),
    )
    out.sort()
    return out


class StateSpace:
    """An enumerated sector with O(log M) lookup from bits to index."""

    def __init__(self, lattice: Lattice, sector=None, cap=ENUMERATION_CAP):
        self.lattice = lattice
        self.sector = sector
        self.bits = enumerate_states(lattice, sector, cap)
        self.bits.setflags(write=False)
        self._full = sector is None

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    def index(self, bits) -> np.ndarray:
        """Indices of ``bits``; raises ``KeyError`` for configs outside the space."""
        bits = np.asarray(bits, dtype=np.int64)
        if self._full:
            idx = bits
        else:
            idx = np.searchsorted(self.bits, bits)
            idx = np.minimum(idx, len(self.bits) - 1)
        if np.any(self.bits[idx] != bits):
            raise KeyError("configuration outside the state space")
        return idx

    def contains(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.int64)
        idx = np.minimum(np.searchsorted(self.bits, bits), len(self.bits) - 1)
        return self.bits[idx] == bits

    def config(self, i: int) -> SpinConfig:
        return SpinConfig(int(self.bits[i]), self.n_sites)


# ---------------------------------------------------------------------------
# Symmetries
# ---------------------------------------------------------------------------


def translation_permutation(lattice: Lattice, shift) -> np.ndarray:
    """``perm[i]`` is the site that spin ``i`` moves to under ``shift``."""
    if not lattice.fully_periodic:
        raise SymmetryUnavailable("translations need periodic boundaries in every direction")
    shift = tuple(int(x) for x in np.atleast_1d(shift))
    if len(shift) != lattice.ndim:
        raise SymmetryUnavailable(f"shift must have {lattice.ndim} components")
    coords = np.unravel_index(np.arange(lattice.n_sites), lattice.dims)
    moved = tuple((c + d) % L for c, d, L in zip(coords, shift, lattice.dims))
    return np.ravel_multi_index(moved, lattice.dims).astype(np.int64)


def permute_bits(bits: np.ndarray, perm: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int64)
    out = np.zeros_like(bits)
    for i, p in enumerate(perm):
        out |= ((bits >> i) & 1) << int(p)
    return out


def translate_config(s: SpinConfig, lattice: Lattice, shift) -> SpinConfig:
    perm = translation_permutation(lattice, shift)
    return SpinConfig(int(permute_bits(np.array([s.bits]), perm)[0]), s.n_sites)


def all_translations(lattice: Lattice) -> list:
    """Permutations for every distinct translation of a periodic lattice."""
    return [
        translation_permutation(lattice, shift)
        for shift in itertools.product(*(range(L) for L in lattice.dims))
    ]


def translation_orbit(bits: int, lattice: Lattice) -> np.ndarray:
    """Distinct translates of one configuration, ascending."""
    b = np.array([bits], dtype=np.int64)
    return np.unique(np.concatenate([permute_bits(b, p) for p in all_translations(lattice)]))


def canonical_representatives(bits: np.ndarray, lattice: Lattice):
    """Smallest translate of each config; returns ``(reps, inverse)``.

    ``reps`` are the unique representatives and ``reps[inverse]`` reproduces
    the canonical form of every input.
    """
    bits = np.asarray(bits, dtype=np.int64)
    canon = bits.copy()
    for perm in all_translations(lattice):
        np.minimum(canon, permute_bits(bits, perm), out=canon)
    return np.unique(canon, return_inverse=True)
