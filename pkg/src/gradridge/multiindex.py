"""Multi-index sets, downward closure and reduced margins."""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError


def _as_index(alpha, dim):
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != dim:
        raise InputError(f"multi-index {alpha} does not have dimension {dim}")
    if any(a < 0 for a in alpha):
        raise InputError(f"multi-index {alpha} has negative entries")
    return alpha


class MultiIndexSet:
    """Ordered, duplicate-free collection of multi-indices in ``N^dim``.

    Insertion order is preserved (it fixes the row order of coefficient
    matrices); membership tests are O(1). Instances are immutable: ``union``
    returns a new set.
    """

    __slots__ = ("dim", "_indices", "_lookup")

    def __init__(self, dim: int, indices: Iterable[Sequence[int]] = ()):
        self.dim = int(dim)
        ordered = []
        lookup = {}
        for alpha in indices:
            alpha = _as_index(alpha, self.dim)
            if alpha in lookup:
                continue
            lookup[alpha] = len(ordered)
            ordered.append(alpha)
        self._indices = tuple(ordered)
        self._lookup = lookup

    def __len__(self):
        return len(self._indices)

    def __iter__(self):
        return iter(self._indices)

    def __getitem__(self, i):
        return self._indices[i]

    def __contains__(self, alpha):
        return tuple(alpha) in self._lookup

    def __eq__(self, other):
        if not isinstance(other, MultiIndexSet):
            return NotImplemented
        return self.dim == other.dim and set(self._indices) == set(other._indices)

    def __hash__(self):
        return hash((self.dim, frozenset(self._indices)))

    def __repr__(self):
        return f"MultiIndexSet(dim={self.dim}, indices={list(self._indices)})"

    def position(self, alpha) -> int:
        return self._lookup[tuple(alpha)]

    def as_array(self) -> np.ndarray:
        return np.array(self._indices, dtype=np.int64).reshape(len(self), self.dim)

    def union(self, new: Iterable[Sequence[int]]) -> "MultiIndexSet":
        """New set with ``new`` appended after the existing indices."""
        return MultiIndexSet(self.dim, itertools.chain(self._indices, new))

    def sorted(self) -> "MultiIndexSet":
        return MultiIndexSet(self.dim, sorted(self._indices))

    def is_downward_closed(self) -> bool:
        for alpha in self._indices:
            for i, a in enumerate(alpha):
                if a > 0 and _minus(alpha, i) not in self._lookup:
                    return False
        return True

    def reduced_margin(self) -> "MultiIndexSet":
        """Indices outside the set whose backward neighbours all lie in the set.

        Returned in lexicographic order.
        """
        if len(self) == 0:
            raise InputError("reduced margin of an empty set is undefined")
        if not self.is_downward_closed():
            raise InputError("reduced margin requires a downward-closed set")
        candidates = set()
        for alpha in self._indices:
            for i in range(self.dim):
                beta = _plus(alpha, i)
                if beta not in self._lookup:
                    candidates.add(beta)
        margin = [
            beta
            for beta in candidates
            if all(_minus(beta, i) in self._lookup for i, b in enumerate(beta) if b > 0)
        ]
        return MultiIndexSet(self.dim, sorted(margin))


def _plus(alpha, i):
    return alpha[:i] + (alpha[i] + 1,) + alpha[i + 1 :]


def _minus(alpha, i):
    return alpha[:i] + (alpha[i] - 1,) + alpha[i + 1 :]


def is_downward_closed(index_set: MultiIndexSet) -> bool:
    return index_set.is_downward_closed()


def reduced_margin(index_set: MultiIndexSet) -> MultiIndexSet:
    return index_set.reduced_margin()


def total_degree_set(dim: int, degree: int, min_degree: int = 0) -> MultiIndexSet:
    """All ``alpha`` with ``min_degree <= |alpha| <= degree``, lexicographically ordered."""
    if not 0 <= min_degree <= degree:
        raise InputError("need 0 <= min_degree <= degree")
    out = []
    # itertools.product yields tuples in lexicographic order
    for alpha in itertools.product(range(degree + 1), repeat=dim):
        if min_degree <= sum(alpha) <= degree:
            out.append(alpha)
    return MultiIndexSet(dim, out)


def bulk_select(scores, theta: float, dim: int | None = None) -> MultiIndexSet:
    """Bulk chasing: smallest top-scored batch capturing a ``theta`` fraction.

    Args:
        scores: iterable of ``(multi_index, score)`` pairs with nonnegative scores.
        theta: fraction in ``(0, 1]`` of the total squared score to capture.

    Returns:
        The selected indices, in selection order (descending score, ties broken
        lexicographically). When every score is zero, the lexicographically
        smallest index is returned so that the enrichment still makes progress.
    """
    if not 0.0 < theta <= 1.0:
        raise InputError("theta must lie in (0, 1]")
    items = [(tuple(int(a) for a in alpha), float(s)) for alpha, s in scores]
    if not items:
        raise InputError("bulk_select needs at least one candidate")
    if dim is None:
        dim = len(items[0][0])
    if any(not np.isfinite(s) or s < 0 for _, s in items):
        raise InputError("scores must be finite and nonnegative")

    items.sort(key=lambda t: (-t[1] * t[1], t[0]))
    squared = [s * s for _, s in items]
    total = 0.0
    for sq in squared:
        total += sq
    if total == 0.0:
        return MultiIndexSet(dim, [min(alpha for alpha, _ in items)])

    selected = []
    running = 0.0
    for (alpha, _), sq in zip(items, squared):
        if sq == 0.0:
            break
        selected.append(alpha)
        running += sq
        if running >= theta * total:
            break
    return MultiIndexSet(dim, selected)
