"""Wall-clock scaling of the samplers in the item count M.

Times are medians over trials measured with ``time.perf_counter_ns``.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import samplers as smp
from .alias import build_alias, draw
from .quantizer import build_index

log = logging.getLogger(__name__)

# Exact preparation materialises an M x D residual pass plus M alias cells per query.
EXACT_MAX_BYTES = 4 * 2**30


@dataclass
class BenchReport:
    kind: str
    num_items: int
    codebook_size: int
    dim: int
    sample_count: int
    prepare_ns: float
    per_draw_ns: float
    total_ns: float
    trials: int
    skipped: str = ""


def bench_scaling(kinds, m_grid, k=16, dim=32, t=200, trials=5, seed=0, queries=None):
    """Median per-query prepare and per-draw time for each (kind, M).

    All fixtures are built first; timing then runs in rounds that visit every
    (kind, M) cell once with a fresh random query, so slow drift of the host
    affects every cell alike. ``queries`` rounds are run (default
    ``trials``, at least 5). Embeddings are i.i.d. Gaussian scaled by
    ``1/sqrt(D)``.
    """
    if trials < 5:
        raise ValueError("at least 5 trials are needed for a median")
    rounds = max(queries or trials, trials)
    rng = np.random.default_rng(seed)
    cells = []
    skipped = []
    for m in m_grid:
        emb = rng.standard_normal((m, dim)) / np.sqrt(dim)
        index = build_index(emb, k, seed=seed) if any(kd in smp.MIDX_KINDS for kd in kinds) else None
        pop = np.log1p(rng.zipf(1.5, size=m).astype(np.float64))
        del emb
        for kind in kinds:
            if kind == "exact" and m * (dim * 8 + 40) > EXACT_MAX_BYTES:
                log.warning("skipping exact sampler at M=%d: per-query memory exceeds guard", m)
                skipped.append(BenchReport(kind, m, k, dim, t, float("nan"), float("nan"),
                                           float("nan"), 0, "memory guard"))
                continue
            shared = None
            if kind == "uni":
                shared = smp.uniform_cell_tables(index)
            elif kind == "pop":
                shared = smp.popularity_cell_tables(index, pop)
            elif kind in smp.STATIC_KINDS:
                shared = smp.static_sampler(kind, m, pop)
            cells.append((kind, m, index, shared, [], []))

    for _ in range(rounds):
        for kind, m, index, shared, prep, drawt in cells:
            zq = rng.standard_normal(dim)
            t0 = time.perf_counter_ns()
            ctx = smp.prepare(kind, zq, index, shared, num_items=m, static=shared)
            t1 = time.perf_counter_ns()
            smp.sample_batch(ctx, t, rng)
            t2 = time.perf_counter_ns()
            prep.append(t1 - t0)
            drawt.append(t2 - t1)

    reports = []
    for kind, m, _, _, prep, drawt in cells:
        reports.append(BenchReport(kind, m, k, dim, t, float(np.median(prep)), float(np.median(drawt)) / t,
                                   float(np.median(np.add(prep, drawt))), rounds))
    order = {kd: i for i, kd in enumerate(kinds)}
    return sorted(reports + skipped, key=lambda r: (order[r.kind], r.num_items))


def bench_alias(sizes, draws=2000, trials=7, seed=0):
    """Median latency of a single :func:`midx.alias.draw` per table size (ns).

    Sizes are visited round-robin within each trial.
    """
    rng = np.random.default_rng(seed)
    tables = {n: build_alias(rng.random(n) + 1e-3) for n in sizes}
    times = {n: [] for n in sizes}
    for _ in range(trials):
        for n, table in tables.items():
            t0 = time.perf_counter_ns()
            for _ in range(draws):
                draw(table, rng)
            times[n].append((time.perf_counter_ns() - t0) / draws)
    return {n: float(np.median(v)) for n, v in times.items()}


def write_csv(reports, path) -> None:
    rows = [asdict(r) for r in reports]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
