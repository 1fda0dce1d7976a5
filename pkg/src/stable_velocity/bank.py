"""Class-conditional FIFO memory bank of reference points.

Queues ``0..C-1`` hold points of one class each; queue ``C`` receives every
pushed point regardless of label and serves classifier-free-guidance dropout
draws. Storage is float32 ring buffers.
"""

from __future__ import annotations

import logging

import numpy as np

from .errors import InsufficientDataError, LabelError, NotPrefilledError
from .targets import ReferenceBatch

log = logging.getLogger(__name__)


class _Ring:
    """Fixed-capacity FIFO over rows of a float32 array."""

    def __init__(self, capacity: int, dim: int):
        self.buf = np.zeros((capacity, dim), dtype=np.float32)
        self.start = 0
        self.size = 0

    @property
    def capacity(self) -> int:
        return self.buf.shape[0]

    def extend(self, rows: np.ndarray) -> None:
        cap = self.capacity
        rows = rows[-cap:]
        m = rows.shape[0]
        if m == 0:
            return
        end = (self.start + self.size) % cap
        pos = (end + np.arange(m)) % cap
        self.buf[pos] = rows
        overflow = max(0, self.size + m - cap)
        self.start = (self.start + overflow) % cap
        self.size = min(cap, self.size + m)

    def snapshot(self) -> np.ndarray:
        """Contents oldest-first (a copy)."""
        idx = (self.start + np.arange(self.size)) % self.capacity
        return self.buf[idx]


class MemoryBank:
    """Per-class FIFO queues of capacity ``capacity`` plus an unconditional queue.

    Parameters
    ----------
    capacity : int
        Per-queue capacity K.
    num_classes : int
        Number of classes C; 0 gives an unconditional-only bank.
    dim : int
        Dimension of stored points.
    p_cfg : float
        Probability that :meth:`draw` returns the unconditional queue.
    """

    def __init__(self, capacity: int = 256, num_classes: int = 0, dim: int = 1, p_cfg: float = 0.0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if num_classes < 0:
            raise ValueError("num_classes must be >= 0")
        if not 0.0 <= p_cfg <= 1.0:
            raise ValueError("p_cfg must lie in [0, 1]")
        self.capacity = capacity
        self.num_classes = num_classes
        self.dim = dim
        self.p_cfg = p_cfg
        self.queues = [_Ring(capacity, dim) for _ in range(num_classes + 1)]

    @property
    def unconditional(self) -> int:
        return self.num_classes

    def lengths(self) -> list[int]:
        return [q.size for q in self.queues]

    def queue(self, index: int) -> np.ndarray:
        return self.queues[index].snapshot()

    def _check_label(self, label) -> int:
        label = int(label)
        if not 0 <= label < self.num_classes:
            raise LabelError(f"label {label} outside [0, {self.num_classes})")
        return label

    def push(self, x0, label=None) -> None:
        """Append ``x0`` to its class queue and to the unconditional queue."""
        x0 = np.asarray(x0, dtype=np.float32).reshape(1, self.dim)
        if self.num_classes:
            self.queues[self._check_label(label)].extend(x0)
        elif label is not None:
            raise LabelError("unconditional bank takes no labels")
        self.queues[self.unconditional].extend(x0)

    def push_many(self, points, labels=None) -> None:
        """Push rows in order; equivalent to repeated :meth:`push`."""
        points = np.asarray(points, dtype=np.float32).reshape(-1, self.dim)
        if self.num_classes:
            labels = np.asarray(labels, dtype=np.int64).reshape(-1)
            if labels.shape[0] != points.shape[0]:
                raise ValueError("one label per point required")
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise LabelError(f"labels must lie in [0, {self.num_classes})")
            for c in np.unique(labels):
                self.queues[c].extend(points[labels == c])
        elif labels is not None:
            raise LabelError("unconditional bank takes no labels")
        self.queues[self.unconditional].extend(points)

    def prefill(self, points, labels=None) -> "MemoryBank":
        """Fill every queue from a dataset in its natural order.

        Class queue ``c`` receives the first K points of class ``c``; the
        unconditional queue ends up holding the last K points overall.
        """
        points = np.asarray(points).reshape(-1, self.dim)
        if points.shape[0] < self.capacity:
            raise InsufficientDataError("all", points.shape[0], self.capacity)
        if self.num_classes:
            labels = np.asarray(labels, dtype=np.int64).reshape(-1)
            for c in range(self.num_classes):
                rows = points[labels == c]
                if rows.shape[0] < self.capacity:
                    raise InsufficientDataError(c, rows.shape[0], self.capacity)
                self.queues[c] = _Ring(self.capacity, self.dim)
                self.queues[c].extend(np.asarray(rows[: self.capacity], dtype=np.float32))
        self.queues[self.unconditional] = _Ring(self.capacity, self.dim)
        self.queues[self.unconditional].extend(np.asarray(points, dtype=np.float32))
        log.info("bank prefilled: %d queues of %d points", len(self.queues), self.capacity)
        return self

    def draw(self, label, rng) -> tuple[int, ReferenceBatch]:
        """Return ``(effective_label, refs)``.

        With probability ``p_cfg`` the unconditional queue is used and the
        effective label is ``C``; otherwise the queue of ``label``.
        """
        if self.num_classes:
            label = self._check_label(label)
        else:
            label = self.unconditional
        if label != self.unconditional and self.p_cfg > 0 and rng.random() < self.p_cfg:
            label = self.unconditional
        q = self.queues[label]
        if q.size == 0:
            raise NotPrefilledError(f"queue {label} is empty; call prefill first")
        return label, ReferenceBatch(q.snapshot())

    def nbytes(self) -> int:
        return sum(q.buf.nbytes for q in self.queues)

    def state(self) -> tuple[np.ndarray, np.ndarray]:
        """``(contents (C+1, K, d) oldest-first, zero-padded; sizes (C+1,))``."""
        out = np.zeros((len(self.queues), self.capacity, self.dim), dtype=np.float32)
        sizes = np.array(self.lengths(), dtype=np.int64)
        for i, q in enumerate(self.queues):
            out[i, : q.size] = q.snapshot()
        return out, sizes

    @classmethod
    def from_state(cls, contents, sizes, p_cfg: float = 0.0) -> "MemoryBank":
        contents = np.asarray(contents, dtype=np.float32)
        bank = cls(contents.shape[1], contents.shape[0] - 1, contents.shape[2], p_cfg)
        for q, rows, n in zip(bank.queues, contents, np.asarray(sizes, dtype=np.int64)):
            q.extend(rows[:n])
        return bank
