"""Channel rates with O(log n) update and sampling"""
import math
from typing import Iterable, Sequence


class EventTable:
    """
    Binary indexed tree over a flat channel enumeration.

    ``total`` is kept incrementally; ``rebuild`` re-sums everything and is
    used periodically to bound floating-point drift.
    """

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("event table needs at least one channel")
        self.size = size
        self.rates = [0.0] * size
        self._tree = [0.0] * (size + 1)
        self._top = 1 << (size.bit_length() - 1)
        self.total = 0.0

    def update(self, index: int, rate: float):
        delta = rate - self.rates[index]
        if delta == 0.0:
            return
        self.rates[index] = rate
        self.total += delta
        tree = self._tree
        i = index + 1
        size = self.size
        while i <= size:
            tree[i] += delta
            i += i & -i

    def update_many(self, start: int, rates: Sequence[float]):
        for offset, rate in enumerate(rates):
            self.update(start + offset, rate)

    def rebuild(self, rates: Iterable[float] = None):
        """Recompute the tree (and total) from scratch in O(n)"""
        if rates is not None:
            self.rates = [float(r) for r in rates]
            if len(self.rates) != self.size:
                raise ValueError("rebuild needs one rate per channel")
        tree = [0.0] + list(self.rates)
        for i in range(1, self.size + 1):
            parent = i + (i & -i)
            if parent <= self.size:
                tree[parent] += tree[i]
        self._tree = tree
        self.total = math.fsum(self.rates)

    def prefix_sum(self, count: int) -> float:
        """Sum of the first ``count`` channel rates"""
        total = 0.0
        i = count
        while i > 0:
            total += self._tree[i]
            i -= i & -i
        return total

    def tree_total(self) -> float:
        return self.prefix_sum(self.size)

    def sample(self, target: float) -> int:
        """
        Index of the channel whose cumulative interval contains ``target``.

        Args:
            target: Value in [0, total)

        Returns:
            Channel index with a positive rate
        """
        tree = self._tree
        position = 0
        remaining = target
        step = self._top
        while step:
            nxt = position + step
            if nxt <= self.size and tree[nxt] <= remaining:
                position = nxt
                remaining -= tree[nxt]
            step >>= 1
        index = min(position, self.size - 1)
        if self.rates[index] > 0.0:
            return index
        # drift pushed the target past the last positive channel
        for candidate in range(index, -1, -1):
            if self.rates[candidate] > 0.0:
                return candidate
        for candidate in range(index + 1, self.size):
            if self.rates[candidate] > 0.0:
                return candidate
        raise ValueError("cannot sample from an event table with zero total rate")
