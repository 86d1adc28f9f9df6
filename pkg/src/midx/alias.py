"""Vose alias tables.

A table over ``n`` outcomes stores one threshold and one alias per column.
Drawing picks a column uniformly and flips a biased coin against the
threshold, so every draw costs O(1) regardless of ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AliasTable:
    prob: np.ndarray  # float64 thresholds in [0, 1]
    alias: np.ndarray  # int64 outcome indices
    total_weight: float

    @property
    def n(self) -> int:
        return len(self.prob)

    def masses(self) -> np.ndarray:
        """Reconstruct the per-outcome probability encoded by the table."""
        return column_masses(self.prob, self.alias)


def _check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-D vector")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    return w


def _vose(w: np.ndarray, total: float):
    n = len(w)
    scaled = (w * (n / total)).tolist()
    prob = [1.0] * n
    alias = list(range(n))
    small = []
    large = []
    for i, p in enumerate(scaled):
        if p < 1.0:
            small.append(i)
        else:
            large.append(i)
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    # Leftovers differ from 1 only by round-off; they keep their own column.
    return prob, alias


def build_alias(weights) -> AliasTable:
    """Build an alias table proportional to ``weights``.

    Zero-weight outcomes stay in the table with zero mass so indices keep
    their meaning. Raises ``ValueError`` for empty, negative, non-finite or
    all-zero input.
    """
    w = _check_weights(weights)
    total = float(w.sum())
    if total <= 0.0:
        raise ValueError("at least one weight must be positive")
    prob, alias = _vose(w, total)
    return AliasTable(
        prob=np.asarray(prob, dtype=np.float64),
        alias=np.asarray(alias, dtype=np.int64),
        total_weight=total,
    )


def table_from_normalized(p: np.ndarray) -> AliasTable:
    """Unchecked fast path for internal callers holding a normalized vector."""
    prob, alias = _vose(p, float(p.sum()))
    return AliasTable(np.asarray(prob), np.asarray(alias, dtype=np.int64), 1.0)


def build_alias_segments(weights, offsets):
    """Build one alias table per contiguous segment of a flat weight vector.

    Segment ``b`` covers ``weights[offsets[b]:offsets[b + 1]]``. Returns flat
    ``(prob, alias)`` arrays where alias entries are *global* positions into
    the flat vector. Empty and all-zero segments get the trivial table
    (``prob = 1``, self alias); callers must give them zero mass upstream.
    """
    w = _check_weights(weights) if len(weights) else np.zeros(0)
    offsets = np.asarray(offsets, dtype=np.int64)
    prob = np.ones(len(w), dtype=np.float64)
    alias = np.arange(len(w), dtype=np.int64)
    for b in range(len(offsets) - 1):
        lo, hi = int(offsets[b]), int(offsets[b + 1])
        if hi - lo <= 1:
            continue
        seg = w[lo:hi]
        total = float(seg.sum())
        if total <= 0.0:
            continue
        p, a = _vose(seg, total)
        prob[lo:hi] = p
        alias[lo:hi] = np.asarray(a, dtype=np.int64) + lo
    return prob, alias


def column_masses(prob: np.ndarray, alias: np.ndarray) -> np.ndarray:
    """Sum each column's contribution back onto outcomes (exact, no sampling)."""
    n = len(prob)
    masses = prob.astype(np.float64).copy()
    np.add.at(masses, alias, 1.0 - prob)
    return masses / n


def draw(table: AliasTable, rng: np.random.Generator) -> int:
    """One draw: a uniform column pick plus one coin flip."""
    col = int(rng.integers(table.n))
    if rng.random() < table.prob[col]:
        return col
    return int(table.alias[col])


def draw_many(table: AliasTable, size: int, rng: np.random.Generator) -> np.ndarray:
    cols = rng.integers(table.n, size=size)
    coins = rng.random(size)
    return np.where(coins < table.prob[cols], cols, table.alias[cols])
