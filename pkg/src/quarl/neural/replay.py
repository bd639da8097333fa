"""Fixed-capacity experience replay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Experience:
    s: int
    a: int  # flip site, or n_sites for the trivial action
    r: float
    s_next: int
    terminal: bool


class ReplayBuffer:
    """Ring buffer of transitions stored column-wise.

    Sampling is refused until the buffer has been filled once.
    """

    def __init__(self, capacity: int = 65536):
        self.capacity = int(capacity)
        self.s = np.zeros(self.capacity, dtype=np.int64)
        self.a = np.zeros(self.capacity, dtype=np.int64)
        self.r = np.zeros(self.capacity)
        self.s_next = np.zeros(self.capacity, dtype=np.int64)
        self.terminal = np.zeros(self.capacity, dtype=bool)
        self._pos = 0
        self._size = 0

    def __len__(self):
        return self._size

    @property
    def full(self) -> bool:
        return self._size == self.capacity

    def push(self, s, a, r, s_next, terminal) -> None:
        s = np.atleast_1d(s)
        n = len(s)
        if n > self.capacity:
            raise ValueError("batch larger than the buffer")
        idx = (self._pos + np.arange(n)) % self.capacity
        self.s[idx] = s
        self.a[idx] = a
        self.r[idx] = r
        self.s_next[idx] = s_next
        self.terminal[idx] = terminal
        self._pos = (self._pos + n) % self.capacity
        self._size = min(self._size + n, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if not self.full:
            raise RuntimeError("replay buffer must be full before sampling")
        idx = rng.choice(self.capacity, size=batch_size, replace=False)
        return {
            "s": self.s[idx],
            "a": self.a[idx],
            "r": self.r[idx],
            "s_next": self.s_next[idx],
            "terminal": self.terminal[idx],
        }

    def experience(self, i: int) -> Experience:
        return Experience(int(self.s[i]), int(self.a[i]), float(self.r[i]), int(self.s_next[i]), bool(self.terminal[i]))
