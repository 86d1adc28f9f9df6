"""Softmax samplers over an inverted multi-index.

Every MIDX-style proposal draws in three stages: a first-subspace codeword
``k1``, a second-subspace codeword ``k2`` given ``k1``, then an item inside
the cell ``(k1, k2)``. The kinds differ only in the within-cell law:

* ``exact``: softmax over residual logits, which makes the product equal to
  the full softmax over items;
* ``uni``: uniform within the cell;
* ``pop``: proportional to item popularity.

The last two are query independent, so their cell tables are built once per
index (:func:`uniform_cell_tables`, :func:`popularity_cell_tables`) and shared
by every query. Static ``uniform`` / ``popularity`` baselines are single-stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .alias import AliasTable, build_alias, build_alias_segments, table_from_normalized
from .quantizer import MultiIndex

MIDX_KINDS = ("exact", "uni", "pop")
STATIC_KINDS = ("uniform", "popularity")


class Sample(NamedTuple):
    item: int
    log_q: float


@dataclass(frozen=True)
class Samples:
    """A batch of draws with their log proposal probabilities."""

    items: np.ndarray
    log_q: np.ndarray

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        for i, lq in zip(self.items.tolist(), self.log_q.tolist()):
            yield Sample(i, lq)

    def __getitem__(self, j):
        return Sample(int(self.items[j]), float(self.log_q[j]))


@dataclass(frozen=True)
class CellTables:
    """Within-cell alias tables laid out over ``index.bucket_items`` order.

    ``log_p[pos]`` is the log within-cell probability of the item stored at
    flat position ``pos``; ``mass[b]`` is the cell's unnormalised weight
    (``|cell|`` for uniform, total popularity for pop) and is zero for cells
    that must never be drawn.
    """

    prob: np.ndarray
    alias: np.ndarray
    log_p: np.ndarray
    mass: np.ndarray

    def log_p_items(self, index: MultiIndex) -> np.ndarray:
        out = np.empty(index.num_items)
        out[index.bucket_items] = self.log_p
        return out


def uniform_cell_tables(index: MultiIndex) -> CellTables:
    sizes = index.bucket_sizes
    per_pos = np.repeat(sizes, sizes).astype(np.float64)
    return CellTables(
        prob=np.ones(index.num_items),
        alias=np.arange(index.num_items),
        log_p=-np.log(per_pos),
        mass=sizes.astype(np.float64),
    )


def popularity_cell_tables(index: MultiIndex, pop) -> CellTables:
    weights = np.asarray(getattr(pop, "weights", pop), dtype=np.float64)
    if weights.shape != (index.num_items,):
        raise ValueError(f"popularity must have one weight per item ({index.num_items})")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("popularity weights must be finite and non-negative")
    if not np.any(weights > 0):
        raise ValueError("popularity is zero for every item")
    w_flat = weights[index.bucket_items]
    offsets = index.bucket_offsets
    k2 = index.codebook_size ** 2
    mass = np.bincount(np.repeat(np.arange(k2), index.bucket_sizes), weights=w_flat, minlength=k2)
    prob, alias = build_alias_segments(w_flat, offsets)
    cell_mass = np.repeat(mass, index.bucket_sizes)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = np.where(w_flat > 0, np.log(w_flat) - np.log(cell_mass), -np.inf)
    return CellTables(prob=prob, alias=alias, log_p=log_p, mass=mass)


def _logsumexp(x, axis=None, keepdims=False):
    """log(sum(exp(x))) that returns -inf for all -inf slices."""
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out if keepdims else (out.reshape(()) if axis is None else np.squeeze(out, axis=axis))


def _log_normalize(logits, axis=None):
    out = logits - _logsumexp(logits, axis=axis, keepdims=True)
    return np.where(np.isfinite(logits), out, -np.inf)


@dataclass
class SamplerContext:
    """Per-query stage distributions, ready for O(1) draws.

    For MIDX kinds ``log_p1`` has shape (K,) and ``log_p2`` (K, K) with
    ``log_p2[k1, k2] = log P2(k2 | k1)``; ``cells`` holds the within-cell law.
    Static kinds only use ``item_table`` / ``log_q_items``.
    """

    kind: str
    num_items: int
    index: MultiIndex | None = None
    stage1: AliasTable | None = None
    stage2_prob: np.ndarray | None = None
    stage2_alias: np.ndarray | None = None
    log_p1: np.ndarray | None = None
    log_p2: np.ndarray | None = None
    cells: CellTables | None = None
    log_psi: np.ndarray | None = None
    log_omega: np.ndarray | None = None
    item_table: AliasTable | None = None
    log_q_items: np.ndarray | None = None

    def log_prob(self, items) -> np.ndarray:
        """Closed-form log Q for the given item ids."""
        items = np.asarray(items, dtype=np.int64)
        if self.log_q_items is not None:
            return self.log_q_items[items]
        a = self.index.assignments[items]
        pos = self.index.positions[items]
        return self.log_p1[a[:, 0]] + self.log_p2[a[:, 0], a[:, 1]] + self.cells.log_p[pos]

    def distribution(self) -> np.ndarray:
        """Full probability vector over items (O(M); for checks and small M)."""
        return np.exp(self.log_prob(np.arange(self.num_items)))


def softmax_oracle(z, embeddings) -> np.ndarray:
    """Brute-force softmax of inner-product logits over all items."""
    logits = np.asarray(embeddings, dtype=np.float64) @ np.asarray(z, dtype=np.float64)
    logits = logits - logits.max()
    p = np.exp(logits)
    return p / p.sum()


def _split_query(z, index: MultiIndex):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (index.dim,):
        raise ValueError(f"query has shape {z.shape}, index expects ({index.dim},)")
    if not np.all(np.isfinite(z)):
        raise ValueError("query vector must be finite")
    half = index.dim // 2
    return z, z[:half], z[half:]


def _stages_from_cells(kind, index, z1, z2, log_cell):
    """Build stage 1/2 from per-cell log weights (before the codeword terms)."""
    k = index.codebook_size
    a = index.codebooks[0] @ z1
    b = index.codebooks[1] @ z2
    row = log_cell + b[None, :]  # log(omega * exp(z2 . c2))
    log_psi = _logsumexp(row, axis=1)
    with np.errstate(invalid="ignore"):
        log_p2 = row - log_psi[:, None]
    log_p2[~np.isfinite(row)] = -np.inf
    log_p1 = _log_normalize(log_psi + a)

    prob2 = np.ones((k, k))
    alias2 = np.tile(np.arange(k), (k, 1))
    p2 = np.exp(log_p2)
    for k1 in np.flatnonzero(np.isfinite(log_psi)):
        # Rows with zero mass keep the placeholder table; stage 1 never picks them.
        t = table_from_normalized(p2[k1])
        prob2[k1], alias2[k1] = t.prob, t.alias
    stage1 = table_from_normalized(np.exp(log_p1))
    return dict(
        kind=kind, num_items=index.num_items, index=index, stage1=stage1,
        stage2_prob=prob2, stage2_alias=alias2, log_p1=log_p1, log_p2=log_p2,
        log_psi=log_psi,
    )


def prepare_exact(z, index: MultiIndex) -> SamplerContext:
    """Exact decomposition of the softmax; costs one pass over all residuals."""
    z, z1, z2 = _split_query(z, index)
    k = index.codebook_size
    r = index.residuals[index.bucket_items] @ z  # residual logits in flat order
    offsets = index.bucket_offsets
    sizes = index.bucket_sizes
    nz = sizes > 0
    log_omega = np.full(k * k, -np.inf)
    if r.size:
        cell_max = np.maximum.reduceat(r, offsets[:-1][nz]) if nz.any() else np.zeros(0)
        shift = np.repeat(cell_max, sizes[nz])
        e = np.exp(r - shift)
        log_omega[nz] = np.log(np.add.reduceat(e, offsets[:-1][nz])) + cell_max
    else:
        e = r
    prob3, alias3 = build_alias_segments(e, offsets)
    log_p3 = r - np.repeat(log_omega[nz], sizes[nz])
    finite = np.isfinite(log_omega)
    mass = np.zeros(k * k)
    mass[finite] = np.exp(log_omega[finite] - log_omega[finite].max())
    cells = CellTables(prob=prob3, alias=alias3, log_p=log_p3, mass=mass)
    log_omega = log_omega.reshape(k, k)
    ctx = SamplerContext(**_stages_from_cells("exact", index, z1, z2, log_omega), cells=cells)
    ctx.log_omega = log_omega
    return ctx


def prepare_uni(z, index: MultiIndex, cells: CellTables | None = None) -> SamplerContext:
    """Uniform within-cell law; O(KD + K^2) given shared ``cells``."""
    z, z1, z2 = _split_query(z, index)
    if cells is None:
        cells = uniform_cell_tables(index)
    k = index.codebook_size
    with np.errstate(divide="ignore"):
        log_cell = np.log(cells.mass).reshape(k, k)
    return SamplerContext(**_stages_from_cells("uni", index, z1, z2, log_cell), cells=cells)


def prepare_pop(z, index: MultiIndex, pop=None, cells: CellTables | None = None) -> SamplerContext:
    """Popularity-weighted within-cell law; O(KD + K^2) given shared ``cells``."""
    z, z1, z2 = _split_query(z, index)
    if cells is None:
        if pop is None:
            raise ValueError("prepare_pop needs either pop or prebuilt cells")
        cells = popularity_cell_tables(index, pop)
    k = index.codebook_size
    with np.errstate(divide="ignore"):
        log_cell = np.log(cells.mass).reshape(k, k)
    return SamplerContext(**_stages_from_cells("pop", index, z1, z2, log_cell), cells=cells)


def static_sampler(kind: str, num_items: int, pop=None) -> SamplerContext:
    """Query-independent uniform or popularity proposal."""
    if kind == "uniform":
        table = build_alias(np.ones(num_items))
        log_q = np.full(num_items, -np.log(num_items))
    elif kind == "popularity":
        if pop is None:
            raise ValueError("popularity sampler requires a popularity vector")
        w = np.asarray(getattr(pop, "weights", pop), dtype=np.float64)
        if w.shape != (num_items,):
            raise ValueError(f"popularity must have {num_items} entries")
        table = build_alias(w)
        with np.errstate(divide="ignore"):
            log_q = np.log(w) - np.log(w.sum())
    else:
        raise ValueError(f"unknown static sampler {kind!r}; choose from {STATIC_KINDS}")
    return SamplerContext(kind=kind, num_items=num_items, item_table=table, log_q_items=log_q)


def _alias_draw(prob, alias, cols, rng):
    coins = rng.random(len(cols))
    return np.where(coins < prob[cols], cols, alias[cols])


def sample_batch(ctx: SamplerContext, t: int, rng: np.random.Generator) -> Samples:
    """Draw ``t`` items with replacement, three alias draws each."""
    if t <= 0:
        return Samples(np.zeros(0, dtype=np.int64), np.zeros(0))
    if ctx.item_table is not None:
        table = ctx.item_table
        items = _alias_draw(table.prob, table.alias, rng.integers(table.n, size=t), rng)
        return Samples(items, ctx.log_q_items[items])

    k = ctx.index.codebook_size
    t1 = ctx.stage1
    k1 = _alias_draw(t1.prob, t1.alias, rng.integers(k, size=t), rng)
    col2 = rng.integers(k, size=t)
    coins = rng.random(t)
    k2 = np.where(coins < ctx.stage2_prob[k1, col2], col2, ctx.stage2_alias[k1, col2])
    b = k1 * k + k2
    lo = ctx.index.bucket_offsets[b]
    size = ctx.index.bucket_offsets[b + 1] - lo
    col3 = lo + np.minimum((rng.random(t) * size).astype(np.int64), size - 1)
    pos = _alias_draw(ctx.cells.prob, ctx.cells.alias, col3, rng)
    items = ctx.index.bucket_items[pos]
    log_q = ctx.log_p1[k1] + ctx.log_p2[k1, k2] + ctx.cells.log_p[pos]
    return Samples(items, log_q)


def prepare(kind: str, z, index: MultiIndex | None = None, cells: CellTables | None = None,
            pop=None, num_items: int | None = None, static: SamplerContext | None = None):
    """Dispatch helper used by the trainer and CLI."""
    if kind == "exact":
        return prepare_exact(z, index)
    if kind == "uni":
        return prepare_uni(z, index, cells)
    if kind == "pop":
        return prepare_pop(z, index, pop, cells)
    if kind in STATIC_KINDS:
        return static if static is not None else static_sampler(kind, num_items, pop)
    raise ValueError(f"unknown sampler kind {kind!r}")


def uni_distribution(z, index: MultiIndex) -> np.ndarray:
    """Closed form of the uniform-cell proposal: softmax of z . (q_i - residual_i)."""
    return softmax_oracle(z, index.codeword_part())


def pop_distribution(z, index: MultiIndex, pop) -> np.ndarray:
    """Closed form of the popularity-cell proposal: softmax of z . (q_i - residual_i) + log pop(i)."""
    w = np.asarray(getattr(pop, "weights", pop), dtype=np.float64)
    with np.errstate(divide="ignore"):
        logits = index.codeword_part() @ np.asarray(z, dtype=np.float64) + np.log(w)
    logits = logits - logits.max()
    p = np.exp(logits)
    return p / p.sum()
