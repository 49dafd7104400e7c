"""Experience replay: a sum tree for proportional sampling plus the buffer itself."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SumTree:
    """Binary tree over ``capacity`` leaves where every node holds its subtree sum.

    The leaf level is padded to a power of two so that a left-to-right walk
    visits leaves in index order. Parents are recomputed as ``left + right``
    on every update rather than patched with deltas, so the sum invariant
    holds exactly in floating point.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.width = 1 << (capacity - 1).bit_length()
        self.tree = np.zeros(2 * self.width - 1)

    @property
    def total(self) -> float:
        return float(self.tree[0])

    def leaf(self, idx):
        return self.tree[np.asarray(idx) + self.width - 1]

    def update(self, idx: int, value: float) -> None:
        if value < 0:
            raise ValueError("priorities must be non-negative")
        if not 0 <= idx < self.capacity:
            raise IndexError(idx)
        node = idx + self.width - 1
        self.tree[node] = value
        while node > 0:
            node = (node - 1) // 2
            self.tree[node] = self.tree[2 * node + 1] + self.tree[2 * node + 2]

    def find(self, value: float) -> int:
        """Index of the leaf whose cumulative range contains ``value``."""
        node = 0
        while node < self.width - 1:
            left = 2 * node + 1
            if value < self.tree[left] or self.tree[left + 1] == 0.0:
                node = left
            else:
                value -= self.tree[left]
                node = left + 1
        return node - (self.width - 1)

    def check(self) -> bool:
        for node in range(self.width - 1):
            if self.tree[node] != self.tree[2 * node + 1] + self.tree[2 * node + 2]:
                return False
        return True


@dataclass
class Batch:
    idx: np.ndarray
    s: np.ndarray
    c: np.ndarray
    z: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray
    probs: np.ndarray
    weights: np.ndarray


class ReplayBuffer:
    """Cyclic FIFO buffer with optional proportional prioritisation.

    Leaves store ``p ** beta`` with ``p = |td| + eps``. New transitions enter
    with the largest priority seen so far so each is replayed at least once.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, *,
                 prioritized: bool = True, beta: float = 0.6, mu: float = 0.4,
                 eps: float = 1e-3):
        self.capacity = capacity
        self.prioritized = prioritized
        self.beta, self.mu, self.eps = beta, mu, eps
        self.s = np.zeros((capacity, state_dim))
        self.c = np.zeros((capacity, action_dim))
        self.z = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.terminal = np.zeros(capacity, dtype=bool)
        self.tree = SumTree(capacity)
        self.max_priority = 1.0
        self.head = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def add(self, s, c, z, s_next, terminal=False) -> int:
        k = self.head
        self.s[k], self.c[k], self.z[k], self.s_next[k] = s, c, z, s_next
        self.terminal[k] = terminal
        self.tree.update(k, self.max_priority ** self.beta)
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return k

    def probabilities(self) -> np.ndarray:
        """Sampling probability of every stored transition."""
        return self.tree.leaf(np.arange(self.size)) / self.tree.total

    def sample_indices(self, k: int, rng: np.random.Generator):
        """Stratified proportional draw; returns ``(indices, P(index))``.

        Returns ``None`` until the buffer is full.
        """
        if not self.full:
            return None
        total = self.tree.total
        edges = np.linspace(0.0, total, k + 1)
        u = rng.uniform(edges[:-1], edges[1:])
        idx = np.array([min(self.tree.find(v), self.size - 1) for v in u], dtype=int)
        return idx, self.tree.leaf(idx) / total

    def sample(self, k: int, rng: np.random.Generator) -> Batch | None:
        if not self.full:
            return None
        if self.prioritized:
            idx, probs = self.sample_indices(k, rng)
            leaf = self.tree.leaf(idx)
            # (X * leaf) / total keeps constant priorities at weight exactly 1
            weights = (self.capacity * leaf / self.tree.total) ** -self.mu
        else:
            idx = rng.integers(0, self.size, size=k)
            probs = np.full(k, 1.0 / self.size)
            weights = np.ones(k)
        return self.batch(idx, probs, weights)

    def batch(self, idx, probs=None, weights=None) -> Batch:
        idx = np.asarray(idx, dtype=int)
        n = len(idx)
        return Batch(idx, self.s[idx], self.c[idx], self.z[idx], self.s_next[idx],
                     self.terminal[idx],
                     np.full(n, 1.0 / self.size) if probs is None else probs,
                     np.ones(n) if weights is None else weights)

    def update_priorities(self, idx, td_error) -> None:
        if not self.prioritized:
            return
        p = np.abs(np.asarray(td_error, float)) + self.eps
        for k, pk in zip(np.asarray(idx, int), p):
            self.tree.update(int(k), float(pk) ** self.beta)
        self.max_priority = max(self.max_priority, float(p.max(initial=0.0)))


def per_weights(probs, capacity: int, mu: float) -> np.ndarray:
    """Importance-sampling weights ``(X * P) ** -mu``."""
    return (capacity * np.asarray(probs, float)) ** -mu


def per_sample(buffer: ReplayBuffer, k: int, rng: np.random.Generator):
    """Stratified proportional draw of ``k`` indices; ``None`` until the buffer is full."""
    return buffer.sample_indices(k, rng)
