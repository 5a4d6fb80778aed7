"""Per-KG FIFO queues of target-encoded batches used as negatives."""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import CapacityViolation, EmptyNegatives, NormViolation, QueueNotWarm, ShapeMismatch

UNIT_TOL = 1e-4


def validate_capacity(K: int, N: int, ex_count: int, ey_count: int) -> None:
    """Require (1 + K) * N < min(|E_x|, |E_y|) so a step never re-samples its own batch."""
    if K < 0 or N < 1 or ex_count < 1 or ey_count < 1:
        raise CapacityViolation(f"invalid sizes K={K}, N={N}, |E_x|={ex_count}, |E_y|={ey_count}")
    total = (1 + K) * N
    bound = min(ex_count, ey_count)
    if not total < bound:
        raise CapacityViolation(
            f"(1 + K) * N = (1 + {K}) * {N} = {total} is not < min(|E_x|, |E_y|) = min({ex_count}, {ey_count}) = {bound}"
        )


class NegativeQueue:
    """Holds the last ``capacity`` batches (ids and vectors) pushed for one KG."""

    def __init__(self, capacity: int, batch_size: int, dim: int, kg_tag: str = "x"):
        if capacity < 0 or batch_size < 1 or dim < 1:
            raise ValueError(f"bad queue geometry K={capacity}, N={batch_size}, dim={dim}")
        self.capacity = capacity
        self.batch_size = batch_size
        self.dim = dim
        self.kg_tag = kg_tag
        self._entries: deque[tuple[np.ndarray, np.ndarray]] = deque()

    def __len__(self):
        return len(self._entries)

    @property
    def warm(self) -> bool:
        return len(self._entries) >= self.capacity

    def entries(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(ids.copy(), vecs.copy()) for ids, vecs in self._entries]

    def push(self, encoded, entity_ids) -> None:
        vecs = np.array(encoded, dtype=np.float64)
        ids = np.array(entity_ids, dtype=np.int64).reshape(-1)
        if vecs.shape != (self.batch_size, self.dim) or len(ids) != self.batch_size:
            raise ShapeMismatch(
                f"queue {self.kg_tag} expects ({self.batch_size}, {self.dim}) with {self.batch_size} ids, "
                f"got {vecs.shape} with {len(ids)} ids"
            )
        if np.abs(np.linalg.norm(vecs, axis=1) - 1.0).max() > UNIT_TOL:
            raise NormViolation(f"queue {self.kg_tag}: pushed rows are not unit-norm")
        if self.capacity == 0:
            return
        self._entries.append((ids, vecs))
        while len(self._entries) > self.capacity:
            self._entries.popleft()

    def pooled(self, current, current_ids) -> tuple[np.ndarray, np.ndarray]:
        """All stored batches (oldest first) followed by the current batch."""
        if not self.warm:
            raise QueueNotWarm(f"queue {self.kg_tag} holds {len(self)} of {self.capacity} batches")
        current = np.asarray(current, dtype=np.float64).reshape(-1, self.dim)
        current_ids = np.asarray(current_ids, dtype=np.int64).reshape(-1)
        vecs = [v for _, v in self._entries] + [current]
        ids = [i for i, _ in self._entries] + [current_ids]
        return np.concatenate(vecs), np.concatenate(ids)

    def negatives_for(self, current, anchor_index: int, current_ids=None) -> np.ndarray:
        """Negatives for one anchor of the current batch: everything pooled minus the anchor itself."""
        current = np.asarray(current, dtype=np.float64).reshape(-1, self.dim)
        if current_ids is None:
            # without ids only the anchor's own row can be identified
            current_ids = -1 - np.arange(len(current))
        vecs, ids = self.pooled(current, current_ids)
        keep = ids != np.asarray(current_ids)[anchor_index]
        if not keep.any():
            raise EmptyNegatives(f"anchor {anchor_index} has no negatives left after exclusion")
        return vecs[keep]

    def state(self) -> dict:
        return {
            "capacity": self.capacity,
            "batch_size": self.batch_size,
            "dim": self.dim,
            "kg_tag": self.kg_tag,
            "ids": [i for i, _ in self._entries],
            "vecs": [v for _, v in self._entries],
        }

    @classmethod
    def from_state(cls, state: dict) -> "NegativeQueue":
        q = cls(int(state["capacity"]), int(state["batch_size"]), int(state["dim"]), str(state["kg_tag"]))
        for ids, vecs in zip(state["ids"], state["vecs"]):
            q._entries.append((np.array(ids, dtype=np.int64), np.array(vecs, dtype=np.float64)))
        return q
