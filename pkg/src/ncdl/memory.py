"""Fixed-capacity FIFO feature queue enlarging the pseudo-labeling sample pool."""

import numpy as np


class FeatureMemory:
    """Queue of recent feature rows; the trainer keeps one instance per view.

    Eviction is strictly oldest-first. Capacity is counted in feature rows;
    capacity 0 keeps the queue permanently empty. Backed by a ring buffer so
    pushes and snapshots stay cheap inside the training loop.
    """

    def __init__(self, capacity: int, feature_dim: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = int(capacity)
        self.feature_dim = int(feature_dim)
        self._buf = np.zeros((self.capacity, self.feature_dim))
        self._start = 0
        self._len = 0

    def __len__(self) -> int:
        return self._len

    def push_batch(self, features: np.ndarray) -> None:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.feature_dim:
            raise ValueError(
                f"expected rows of dim {self.feature_dim}, got shape {features.shape}"
            )
        if self.capacity == 0:
            return
        n = features.shape[0]
        if n >= self.capacity:
            # everything currently stored is evicted; keep the newest rows
            self._buf[:] = features[n - self.capacity :]
            self._start = 0
            self._len = self.capacity
            return
        write = (self._start + self._len) % self.capacity
        first = min(n, self.capacity - write)
        self._buf[write : write + first] = features[:first]
        if first < n:
            self._buf[: n - first] = features[first:]
        overflow = self._len + n - self.capacity
        if overflow > 0:
            self._start = (self._start + overflow) % self.capacity
            self._len = self.capacity
        else:
            self._len += n

    def snapshot(self) -> np.ndarray:
        """Copy of the current contents, oldest row first."""
        if self._len == 0:
            return np.zeros((0, self.feature_dim))
        end = self._start + self._len
        if end <= self.capacity:
            return self._buf[self._start : end].copy()
        return np.vstack([self._buf[self._start :], self._buf[: end - self.capacity]])
