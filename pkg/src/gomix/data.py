"""Binary response patterns and datasets.

A dataset is a rectangular 0/1 array, one row per respondent and one column
per item.  The same data can be viewed as a contingency table mapping each
distinct pattern to its count; both views are kept consistent here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ResponsePattern", "Dataset"]


@dataclass(frozen=True)
class ResponsePattern:
    """An ordered tuple of J binary responses (1 = positive)."""

    bits: tuple

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) == 0:
            raise ValueError("a response pattern needs at least one item")
        if any(b not in (0, 1) for b in bits):
            raise ValueError("response pattern entries must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @property
    def j(self):
        return len(self.bits)

    @property
    def all_zero(self):
        return not any(self.bits)

    def to_string(self):
        """Serialize with the first item leftmost (most significant)."""
        return "".join(str(b) for b in self.bits)

    @classmethod
    def from_string(cls, s):
        s = s.strip()
        if not s or any(c not in "01" for c in s):
            raise ValueError(f"pattern string must be nonempty 0/1 characters, got {s!r}")
        return cls(tuple(int(c) for c in s))

    def as_array(self):
        return np.array(self.bits, dtype=np.uint8)

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)


def _validated_matrix(x):
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ValueError("response data must be a 2-D array (individuals x items)")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("response data needs at least one row and one column")
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError("response data entries must be 0 or 1")
    return np.ascontiguousarray(arr, dtype=np.uint8)


@dataclass
class Dataset:
    """N x J binary responses with an optional label per item."""

    x: np.ndarray
    item_labels: tuple | None = None
    _table_cache: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.x = _validated_matrix(self.x)
        if self.item_labels is not None:
            labels = tuple(str(s) for s in self.item_labels)
            if len(labels) != self.x.shape[1]:
                raise ValueError("item_labels length must equal the item count")
            self.item_labels = labels

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def j(self):
        return self.x.shape[1]

    def rows(self):
        """Iterate the rows as ResponsePattern objects."""
        for row in self.x:
            yield ResponsePattern(tuple(int(v) for v in row))

    def pattern_table(self):
        """Distinct patterns with counts, ordered by pattern string.

        Returns
        -------
        (patterns, counts) : (uint8 ndarray of shape (P, J), int64 ndarray)
            Counts sum to N.
        """
        if self._table_cache is None:
            patterns, counts = np.unique(self.x, axis=0, return_counts=True)
            self._table_cache = (patterns, counts.astype(np.int64))
        return self._table_cache

    def pattern_counts(self):
        """The contingency-table view: {ResponsePattern: count}."""
        patterns, counts = self.pattern_table()
        return {
            ResponsePattern(tuple(int(v) for v in p)): int(c)
            for p, c in zip(patterns, counts)
        }

    def count_of(self, pattern):
        pattern = as_pattern(pattern, self.j)
        matches = np.all(self.x == pattern.as_array()[None, :], axis=1)
        return int(matches.sum())

    @property
    def all_zero_count(self):
        return int((self.x.sum(axis=1) == 0).sum())

    @classmethod
    def from_pattern_counts(cls, pairs, item_labels=None):
        """Build a row-level dataset by expanding (pattern, count) pairs."""
        rows = []
        j = None
        for pattern, count in pairs:
            pattern = pattern if isinstance(pattern, ResponsePattern) else ResponsePattern(tuple(pattern))
            if j is None:
                j = pattern.j
            elif pattern.j != j:
                raise ValueError("all patterns must have the same length")
            count = int(count)
            if count < 0:
                raise ValueError("pattern counts must be nonnegative")
            rows.extend([pattern.bits] * count)
        if not rows:
            raise ValueError("pattern counts must describe at least one individual")
        return cls(np.array(rows, dtype=np.uint8), item_labels=item_labels)


def as_pattern(pattern, j=None):
    """Coerce strings/sequences to ResponsePattern, checking length if given."""
    if isinstance(pattern, ResponsePattern):
        out = pattern
    elif isinstance(pattern, str):
        out = ResponsePattern.from_string(pattern)
    else:
        out = ResponsePattern(tuple(pattern))
    if j is not None and out.j != j:
        raise ValueError(f"pattern has {out.j} items, expected {j}")
    return out
