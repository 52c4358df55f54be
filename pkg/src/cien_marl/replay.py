"""Fixed-capacity ring buffer with uniform minibatch sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    s_i: np.ndarray
    s_o: np.ndarray
    a_i: np.ndarray
    c_i: np.ndarray | None
    reward: float
    s_i_next: np.ndarray
    s_o_next: np.ndarray
    done: bool


@dataclass
class Batch:
    s_i: np.ndarray
    s_o: np.ndarray
    a_i: np.ndarray
    c_i: np.ndarray | None
    reward: np.ndarray
    s_i_next: np.ndarray
    s_o_next: np.ndarray
    done: np.ndarray
    owner: int | None = None

    def __len__(self):
        return self.reward.shape[0]

    @classmethod
    def from_transitions(cls, transitions: list[Transition], owner: int | None = None) -> "Batch":
        has_c = transitions[0].c_i is not None
        return cls(
            np.array([t.s_i for t in transitions], dtype=float),
            np.array([t.s_o for t in transitions], dtype=float),
            np.array([t.a_i for t in transitions], dtype=float),
            np.array([t.c_i for t in transitions], dtype=float) if has_c else None,
            np.array([t.reward for t in transitions], dtype=float),
            np.array([t.s_i_next for t in transitions], dtype=float),
            np.array([t.s_o_next for t in transitions], dtype=float),
            np.array([t.done for t in transitions], dtype=float),
            owner,
        )


class ReplayBuffer:
    """Ring storage of transitions; dimensions are fixed at construction.

    ``influence_dim=0`` means the buffer stores no collective-influence column
    and rejects transitions that carry one (and vice versa).
    """

    def __init__(self, capacity: int, state_dim: int, object_dim: int, action_dim: int,
                 influence_dim: int = 0, owner: int | None = None, dtype=np.float64):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.dims = dict(s_i=state_dim, s_o=object_dim, a_i=action_dim, c_i=influence_dim)
        self.owner = owner
        # storage is allocated lazily in chunks so a 1e6-capacity buffer costs nothing up front
        self._dtype = dtype
        self._alloc = 0
        self._store: dict[str, np.ndarray] = {}
        self._cursor = 0
        self.size = 0

    @property
    def has_influence(self) -> bool:
        return self.dims["c_i"] > 0

    def __len__(self):
        return self.size

    def _shapes(self):
        d = self.dims
        out = dict(s_i=d["s_i"], s_o=d["s_o"], a_i=d["a_i"], reward=None,
                   s_i_next=d["s_i"], s_o_next=d["s_o"], done=None)
        if self.has_influence:
            out["c_i"] = d["c_i"]
        return out

    def _grow(self, needed: int):
        new = min(self.capacity, max(needed, 2 * self._alloc, 1024))
        for name, width in self._shapes().items():
            shape = (new,) if width is None else (new, width)
            arr = np.zeros(shape, dtype=self._dtype)
            if self._alloc:
                arr[:self._alloc] = self._store[name]
            self._store[name] = arr
        self._alloc = new

    def _check(self, t: Transition):
        if (t.c_i is not None) != self.has_influence:
            raise ValueError("transition influence presence does not match the buffer mode")
        for name in ("s_i", "s_o", "a_i", "s_i_next", "s_o_next", "c_i"):
            val = getattr(t, name)
            if val is None:
                continue
            want = self.dims[name.replace("_next", "")]
            if np.shape(val) != (want,):
                raise ValueError(f"transition field {name} has shape {np.shape(val)}, expected ({want},)")

    def push(self, t: Transition) -> None:
        self._check(t)
        if self._cursor >= self._alloc:
            self._grow(self._cursor + 1)
        k = self._cursor
        st = self._store
        st["s_i"][k] = t.s_i
        st["s_o"][k] = t.s_o
        st["a_i"][k] = t.a_i
        if self.has_influence:
            st["c_i"][k] = t.c_i
        st["reward"][k] = t.reward
        st["s_i_next"][k] = t.s_i_next
        st["s_o_next"][k] = t.s_o_next
        st["done"][k] = float(t.done)
        self._cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __getitem__(self, idx) -> Batch:
        st = self._store
        return Batch(
            st["s_i"][idx], st["s_o"][idx], st["a_i"][idx],
            st["c_i"][idx] if self.has_influence else None,
            st["reward"][idx], st["s_i_next"][idx], st["s_o_next"][idx], st["done"][idx],
            self.owner,
        )

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        """``n`` indices drawn uniformly with replacement."""
        if n < 1:
            raise ValueError("sample size must be positive")
        if self.size < n:
            raise ValueError(f"buffer holds {self.size} transitions, cannot sample {n}")
        return self[rng.integers(0, self.size, size=n)]

    def oldest_index(self) -> int:
        return self._cursor if self.size == self.capacity else 0
