"""Ordered multi-indices and the wedge-product sign conventions.

Multi-indices are 1-based strictly increasing tuples.  ``dz_I`` means
``dz_{i_1} ^ ... ^ dz_{i_p}``; all signs below are relative to that ordering.
"""

from __future__ import annotations

import bisect
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from .errors import ParameterError

MAX_DIM = 8

MultiIndex = tuple


def _check_multiindex(index, n=None):
    index = tuple(int(i) for i in index)
    if any(a >= b for a, b in zip(index, index[1:])):
        raise ParameterError(f"multi-index {index} is not strictly increasing")
    if index and index[0] < 1:
        raise ParameterError(f"multi-index {index} has entries below 1")
    if n is not None and index and index[-1] > n:
        raise ParameterError(f"multi-index {index} has entries above n={n}")
    return index


@dataclass(frozen=True)
class IndexTable:
    """All size-``p`` multi-indices of ``1..n`` in lexicographic order."""

    n: int
    p: int
    indices: tuple = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.indices)

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __getitem__(self, k):
        return self.indices[k]

    def rank(self, index) -> int:
        """0-based position of ``index`` (binary search)."""
        index = tuple(index)
        k = bisect.bisect_left(self.indices, index)
        if k == len(self.indices) or self.indices[k] != index:
            raise ParameterError(f"{index} is not in the table for n={self.n}, p={self.p}")
        return k

    def complement(self, index) -> tuple:
        s = set(index)
        return tuple(i for i in range(1, self.n + 1) if i not in s)


@lru_cache(maxsize=None)
def _table(n: int, p: int) -> IndexTable:
    # itertools.combinations already emits lexicographic order
    return IndexTable(n, p, tuple(itertools.combinations(range(1, n + 1), p)))


def build_index_table(n: int, p: int) -> IndexTable:
    """Lexicographic table of the ``C(n, p)`` multi-indices, ``1 <= p <= n <= 8``."""
    if not (isinstance(n, (int, np.integer)) and isinstance(p, (int, np.integer))):
        raise ParameterError("n and p must be integers")
    if not 1 <= p <= n <= MAX_DIM:
        raise ParameterError(f"need 1 <= p <= n <= {MAX_DIM}, got n={n}, p={p}")
    return _table(int(n), int(p))


def insert_with_sign(index, k: int):
    """Insert ``k`` into ``index``: ``dz_k ^ dz_I' = sign * dz_{I'_k}``.

    The sign is the parity of the number of entries of ``index`` below ``k``.
    """
    index = _check_multiindex(index)
    k = int(k)
    if k in index:
        raise ParameterError(f"cannot insert {k} into {index}: already present")
    if k < 1:
        raise ParameterError(f"index entries are 1-based, got {k}")
    j = bisect.bisect_left(index, k)
    return index[:j] + (k,) + index[j:], (-1) ** j


def remove_with_sign(index, k: int):
    """Inverse of :func:`insert_with_sign`: returns ``(I', sign)``."""
    index = _check_multiindex(index)
    if k not in index:
        raise ParameterError(f"{k} is not in {index}")
    j = index.index(k)
    return index[:j] + index[j + 1:], (-1) ** j


def complement_sign(index, n: int) -> int:
    """Sign with ``dz_K ^ dz_{K^c} = sign * dz_1 ^ ... ^ dz_n``."""
    index = _check_multiindex(index, n)
    rest = [i for i in range(1, n + 1) if i not in index]
    inversions = sum(1 for k in index for j in rest if j < k)
    return -1 if inversions % 2 else 1


@lru_cache(maxsize=None)
def insertion_tensor(n: int, p: int) -> np.ndarray:
    """Signed insertion map of shape ``(n, C(n, p-1), C(n, p))``.

    ``T[i-1, rank(I'), rank(I'_i)] = (-1)^(i|I'_i)``; every other entry is 0.
    ``p = 1`` uses the single empty multi-index for ``I'``.
    """
    if not 1 <= p <= n <= MAX_DIM:
        raise ParameterError(f"need 1 <= p <= n <= {MAX_DIM}, got n={n}, p={p}")
    lower = _table(n, p - 1)
    upper = _table(n, p)
    T = np.zeros((n, len(lower), len(upper)))
    for a, sub in enumerate(lower):
        for i in range(1, n + 1):
            if i in sub:
                continue
            full, sign = insert_with_sign(sub, i)
            T[i - 1, a, upper.rank(full)] = sign
    T.setflags(write=False)
    return T


def binomial(n: int, p: int) -> int:
    return comb(n, p)
