from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateKeyError, NotFoundError
from .temporal_graph import TemporalNodeId


class KeyedTable:
    """Rows of a read-only ``(n, K)`` matrix keyed by :class:`TemporalNodeId`."""

    def __init__(self, ids: Sequence, values):
        ids = tuple(TemporalNodeId(int(v[0]), int(v[1])) for v in ids)
        values = np.array(values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.shape[0] != len(ids):
            raise ValueError(f"values must have shape ({len(ids)}, K), got {values.shape}")
        index = {}
        for i, v in enumerate(ids):
            if v in index:
                raise DuplicateKeyError(f"duplicate occurrence {v.node}@{v.time}")
            index[v] = i
        values.setflags(write=False)
        self.ids = ids
        self.values = values
        self._index = index

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return len(self.ids)

    def __contains__(self, v):
        return v in self._index

    def __getitem__(self, v) -> np.ndarray:
        return self.values[self.position(v)]

    def position(self, v) -> int:
        try:
            return self._index[v]
        except KeyError:
            raise NotFoundError(f"occurrence {tuple(v)} has no row") from None

    def positions(self, ids: Iterable) -> np.ndarray:
        return np.fromiter((self.position(v) for v in ids), dtype=np.int64)

    def take(self, ids: Iterable) -> np.ndarray:
        return self.values[self.positions(ids)]

    def aligned(self, order: Sequence):
        """Values reindexed to ``order`` plus a mask of which rows exist here."""
        pos = np.fromiter((self._index.get(v, -1) for v in order), dtype=np.int64, count=len(order))
        mask = pos >= 0
        out = np.zeros((len(order), self.num_classes))
        out[mask] = self.values[pos[mask]]
        return out, mask

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.ids == other.ids
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def __repr__(self):
        return f"{type(self).__name__}(rows={len(self)}, num_classes={self.num_classes})"
