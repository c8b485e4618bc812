"""Experience replay: a ring buffer of transitions indexed by a sum tree of
priorities for proportional prioritized sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SumTree:
    """Binary tree over ``capacity`` leaves (rounded up to a power of two).

    Node ``i`` has children ``2i`` and ``2i + 1``; the root is node 1 and leaf
    ``j`` lives at node ``n_leaves + j``. Parents are recomputed from their
    children on every update, so sums never accumulate drift.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        n = 1
        while n < capacity:
            n *= 2
        self.n_leaves = n
        self.tree = np.zeros(2 * n)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def leaf(self, idx) -> np.ndarray:
        return self.tree[self.n_leaves + np.asarray(idx)]

    def update(self, idx, values) -> None:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        values = np.broadcast_to(np.asarray(values, dtype=float), idx.shape)
        if idx.size and (idx.min() < 0 or idx.max() >= self.capacity):
            raise IndexError("leaf index out of range")
        if np.any(values < 0):
            raise ValueError("priorities must be >= 0")
        nodes = self.n_leaves + idx
        self.tree[nodes] = values
        # all leaves share one depth, so each pass handles exactly one level;
        # duplicate parents just get the same value twice
        nodes = nodes // 2
        while nodes.size and nodes[0] >= 1:
            self.tree[nodes] = self.tree[2 * nodes] + self.tree[2 * nodes + 1]
            nodes = nodes // 2

    def find(self, mass) -> np.ndarray:
        """Leaf indices whose cumulative-priority interval contains ``mass``."""
        v = np.atleast_1d(np.asarray(mass, dtype=float)).copy()
        node = np.ones(v.shape, dtype=np.int64)
        while node[0] < self.n_leaves:
            left = 2 * node
            lsum = self.tree[left]
            go_right = (v >= lsum) & (self.tree[left + 1] > 0)
            v = np.where(go_right, v - lsum, v)
            node = left + go_right
        return node - self.n_leaves

    def check(self, tol: float = 1e-9) -> float:
        """Largest |node - (left + right)| over internal nodes."""
        internal = np.arange(1, self.n_leaves)
        diff = np.abs(self.tree[internal] - self.tree[2 * internal] - self.tree[2 * internal + 1])
        return float(diff.max()) if diff.size else 0.0


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    weights: np.ndarray
    indices: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer with optional proportional prioritization.

    New transitions enter with the largest priority seen so far (1.0 at
    start); leaves hold priority**alpha. States are stored as float32 and
    storage grows on demand up to ``capacity``.
    """

    def __init__(self, capacity: int, state_dim: int, alpha: float = 0.6, prioritized: bool = True, dtype=np.float32):
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.alpha = float(alpha)
        self.prioritized = prioritized
        self.dtype = dtype
        self.tree = SumTree(self.capacity)
        self.max_priority = 1.0
        self.cursor = 0
        self.size = 0
        self._alloc = 0
        self.states = np.empty((0, self.state_dim), dtype)
        self.next_states = np.empty((0, self.state_dim), dtype)
        self.actions = np.empty(0, np.int64)
        self.rewards = np.empty(0)
        self.dones = np.empty(0, bool)

    def __len__(self):
        return self.size

    def _grow(self):
        new = min(self.capacity, max(1024, 2 * self._alloc))
        for name in ("states", "next_states", "actions", "rewards", "dones"):
            old = getattr(self, name)
            arr = np.zeros((new,) + old.shape[1:], old.dtype)
            arr[: self._alloc] = old
            setattr(self, name, arr)
        self._alloc = new

    def push(self, state, action: int, reward: float, next_state, done: bool) -> int:
        i = self.cursor
        if i >= self._alloc:
            self._grow()
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        self.tree.update(i, self.max_priority**self.alpha)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def probabilities(self) -> np.ndarray:
        p = self.tree.leaf(np.arange(self.size))
        return p / p.sum()

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if not self.prioritized:
            return rng.integers(0, self.size, batch_size)
        total = self.tree.total
        seg = total / batch_size
        mass = (np.arange(batch_size) + rng.random(batch_size)) * seg
        idx = self.tree.find(np.minimum(mass, np.nextafter(total, 0)))
        return np.minimum(idx, self.size - 1)

    def sample(self, batch_size: int, beta: float, rng: np.random.Generator) -> Batch | None:
        """Stratified proportional sample with importance weights
        (N P(i))^-beta / max; ``None`` while fewer than ``batch_size`` stored."""
        if self.size < batch_size:
            return None
        idx = self.sample_indices(batch_size, rng)
        if self.prioritized:
            probs = self.tree.leaf(idx) / self.tree.total
            w = (self.size * probs) ** (-beta)
            w = w / w.max()
        else:
            w = np.ones(batch_size)
        return Batch(
            self.states[idx].astype(float),
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx].astype(float),
            self.dones[idx],
            w,
            idx,
        )

    def update_priorities(self, idx, priorities) -> None:
        priorities = np.asarray(priorities, dtype=float)
        if not self.prioritized:
            return
        self.tree.update(idx, priorities**self.alpha)
        self.max_priority = max(self.max_priority, float(priorities.max()))
