"""Fully convolutional action-value network with hand-written backprop.

The network maps a +-1 spin field to one action value per site, the value of
flipping that spin.  Convolutions use "same" padding (circular on periodic
axes, zeros on open ones) so the output has the lattice's shape, and on a
periodic lattice the network is exactly translation equivariant.

Convolutions are done as a gather (im2col) followed by a matrix product, in
a channels-last layout: activations have shape ``(batch, n_sites, channels)``.
Everything is float64.
"""

from __future__ import annotations

import copy
import itertools

import numpy as np

from ..errors import ShapeError
from ..lattice import Lattice, bits_to_spins

DEFAULT_CHUNK = 4096


def conv_gather_index(lattice: Lattice, kernel_size: int = 3) -> np.ndarray:
    """``(n_sites, kernel_size ** ndim)`` source sites for each output site.

    Out-of-range sources on open axes point at the padding row ``n_sites``.
    """
    if kernel_size % 2 != 1:
        raise ValueError("kernel size must be odd")
    half = kernel_size // 2
    offsets = list(itertools.product(range(-half, half + 1), repeat=lattice.ndim))
    coords = np.array(np.unravel_index(np.arange(lattice.n_sites), lattice.dims)).T
    idx = np.empty((lattice.n_sites, len(offsets)), dtype=np.int64)
    for k, off in enumerate(offsets):
        c = coords + np.array(off)
        valid = np.ones(lattice.n_sites, dtype=bool)
        for ax, (L, per) in enumerate(zip(lattice.dims, lattice.periodic)):
            if per:
                c[:, ax] %= L
            else:
                valid &= (c[:, ax] >= 0) & (c[:, ax] < L)
                c[:, ax] = np.clip(c[:, ax], 0, L - 1)
        flat = np.ravel_multi_index(tuple(c.T), lattice.dims)
        idx[:, k] = np.where(valid, flat, lattice.n_sites)
    return idx


class QNetwork:
    """``hidden_layers`` ReLU conv layers of ``channels`` maps plus a linear conv head.

    Weights are drawn uniformly from ``+-1/sqrt(fan_in)``; the head starts at
    zero (``zero_head=True``) so a fresh network outputs ``Q = 0``.
    """

    def __init__(
        self,
        lattice: Lattice,
        channels: int = 64,
        hidden_layers: int = 3,
        kernel_size: int = 3,
        seed=0,
        zero_head: bool = True,
    ):
        self.lattice = lattice
        self.channels = int(channels)
        self.hidden_layers = int(hidden_layers)
        self.kernel_size = int(kernel_size)
        self.gather = conv_gather_index(lattice, kernel_size)
        self._padded = bool(np.any(self.gather == lattice.n_sites))
        self._scatter = []
        for col in self.gather.T:
            dst = np.flatnonzero(col < lattice.n_sites)
            self._scatter.append((col[dst], dst))
        rng = np.random.default_rng(seed)
        k = self.gather.shape[1]
        widths = [1] + [self.channels] * self.hidden_layers + [1]
        self.params = {}
        for layer, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
            bound = 1.0 / np.sqrt(k * cin)
            head = layer == len(widths) - 2
            if head and zero_head:
                self.params[f"w{layer}"] = np.zeros((k * cin, cout))
                self.params[f"b{layer}"] = np.zeros(cout)
            else:
                self.params[f"w{layer}"] = rng.uniform(-bound, bound, (k * cin, cout))
                self.params[f"b{layer}"] = rng.uniform(-bound, bound, cout)

    @property
    def n_layers(self) -> int:
        return self.hidden_layers + 1

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def param_shapes(self) -> dict:
        return {k: list(v.shape) for k, v in self.params.items()}

    def copy(self) -> "QNetwork":
        return copy.deepcopy(self)

    def load_params(self, params: dict) -> None:
        for k, v in params.items():
            if self.params[k].shape != np.shape(v):
                raise ShapeError(f"parameter {k} has shape {np.shape(v)}, expected {self.params[k].shape}")
            self.params[k] = np.array(v, dtype=np.float64)

    # -- forward / backward ---------------------------------------------

    def _as_input(self, spins) -> np.ndarray:
        x = np.asarray(spins, dtype=np.float64)
        n = self.lattice.n_sites
        dims = tuple(self.lattice.dims)
        if x.shape[-len(dims):] == dims and x.ndim >= len(dims) + 1 and len(dims) > 1:
            x = x.reshape(x.shape[: -len(dims)] + (n,))
        if x.ndim != 2 or x.shape[1] != n:
            raise ShapeError(f"expected spins of shape (batch, {n}) or (batch, *{dims}), got {np.shape(spins)}")
        return x[:, :, None]

    def _columns(self, x):
        if self._padded:
            x = np.concatenate([x, np.zeros((x.shape[0], 1, x.shape[2]))], axis=1)
        cols = np.take(x, self.gather, axis=1)  # contiguous, unlike x[:, gather]
        return cols.reshape(x.shape[0] * self.lattice.n_sites, -1)

    def _forward(self, x, keep):
        b, n = x.shape[0], self.lattice.n_sites
        cache = []
        for layer in range(self.n_layers):
            cols = self._columns(x)
            z = cols @ self.params[f"w{layer}"] + self.params[f"b{layer}"]
            last = layer == self.n_layers - 1
            if keep:
                cache.append((cols, z if not last else None))
            x = (z if last else np.maximum(z, 0.0)).reshape(b, n, -1)
        return x[:, :, 0], cache

    def forward(self, spins) -> np.ndarray:
        """Per-site action values for spin fields of shape ``(B, N)`` or ``(B, *dims)``."""
        spins_arr = np.asarray(spins)
        q, _ = self._forward(self._as_input(spins_arr), keep=False)
        if spins_arr.ndim == 1 + len(self.lattice.dims) and len(self.lattice.dims) > 1:
            return q.reshape((-1,) + tuple(self.lattice.dims))
        return q

    def q_values(self, bits, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
        """``(M, n_sites)`` flip action values for configurations ``bits``."""
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        n = self.lattice.n_sites
        out = np.empty((len(bits), n))
        for start in range(0, len(bits), chunk):
            sl = slice(start, start + chunk)
            x = bits_to_spins(bits[sl], n).astype(np.float64)[:, :, None]
            out[sl] = self._forward(x, keep=False)[0]
        return out

    def forward_cached(self, bits):
        bits = np.atleast_1d(np.asarray(bits, dtype=np.int64))
        x = bits_to_spins(bits, self.lattice.n_sites).astype(np.float64)[:, :, None]
        q, cache = self._forward(x, keep=True)
        return q, (len(bits), cache)

    def backward(self, cache, grad_q: np.ndarray) -> dict:
        """Gradients of a scalar loss given ``dL/dQ`` of shape ``(B, n_sites)``."""
        b, layers = cache
        n = self.lattice.n_sites
        grads = {}
        g = np.asarray(grad_q, dtype=np.float64).reshape(b * n, 1)
        for layer in range(self.n_layers - 1, -1, -1):
            cols, z = layers[layer]
            if z is not None:
                g = g * (z > 0)
            grads[f"w{layer}"] = cols.T @ g
            grads[f"b{layer}"] = g.sum(axis=0)
            if layer == 0:
                break
            gcols = (g @ self.params[f"w{layer}"].T).reshape(b, n, self.gather.shape[1], -1)
            cin = gcols.shape[-1]
            gx = np.zeros((b, n + 1 if self._padded else n, cin))
            for k in range(self.gather.shape[1]):
                # sources are distinct within one offset, except the padding row
                src, dst = self._scatter[k]
                gx[:, src, :] += np.take(gcols[:, :, k, :], dst, axis=1)
            g = gx[:, :n, :].reshape(b * n, cin)
        return grads


def qnet_forward(net: QNetwork, s) -> np.ndarray:
    return net.forward(s)


def qnet_gradients(net: QNetwork, cache, grad_q) -> dict:
    return net.backward(cache, grad_q)
