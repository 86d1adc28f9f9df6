"""How far is a proposal from the softmax it stands in for?

All divergences here are computed from closed-form distributions over every
item, never from sample frequencies.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .quantizer import MultiIndex
from .samplers import pop_distribution, softmax_oracle, uni_distribution

BOUND_SLACK = 1e-9


class InfiniteDivergenceError(ValueError):
    """Raised when p puts mass where q has none."""


@dataclass(frozen=True)
class DivergenceReport:
    kl: float
    tv: float
    bound: float
    bound_satisfied: bool
    c_max: float
    z_norm: float

    def as_dict(self) -> dict:
        return asdict(self)


def kl_divergence(p, q) -> float:
    """sum_i p_i log(p_i / q_i) with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("p and q must have the same shape")
    support = p > 0
    if np.any(q[support] <= 0):
        raise InfiniteDivergenceError("q is zero where p is positive")
    ps, qs = p[support], q[support]
    return float(np.sum(ps * (np.log(ps) - np.log(qs))))


def total_variation(p, q) -> float:
    return float(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum())


def _report(p_approx, p_true, bound, c_max, z) -> DivergenceReport:
    kl = kl_divergence(p_approx, p_true)
    return DivergenceReport(
        kl=kl,
        tv=total_variation(p_approx, p_true),
        bound=float(bound),
        bound_satisfied=bool(kl <= bound + BOUND_SLACK),
        c_max=float(c_max),
        z_norm=float(np.linalg.norm(z)),
    )


def verify_bound_uni(z, index: MultiIndex, embeddings) -> DivergenceReport:
    """KL(uniform-cell proposal || softmax) against 2 * C * |z|."""
    z = np.asarray(z, dtype=np.float64)
    c = index.max_residual_norm
    return _report(uni_distribution(z, index), softmax_oracle(z, embeddings),
                   2.0 * c * np.linalg.norm(z), c, z)


def verify_bound_pop(z, index: MultiIndex, embeddings, pop) -> DivergenceReport:
    """KL(popularity-cell proposal || softmax) against 2 * C * |z| + log(max pop / min pop)."""
    w = np.asarray(getattr(pop, "weights", pop), dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("the popularity bound needs strictly positive popularity for every item")
    z = np.asarray(z, dtype=np.float64)
    c = index.max_residual_norm
    bound = 2.0 * c * np.linalg.norm(z) + np.log(w.max() / w.min())
    return _report(pop_distribution(z, index, w), softmax_oracle(z, embeddings), bound, c, z)


def cumulative_curve(dist, popularity_order, num_items: int | None = None):
    """Cumulative mass over items ranked by ``popularity_order`` (most popular first).

    ``dist`` is either a probability vector or an array of sampled item ids;
    samples are turned into empirical frequencies first. Returns a list of
    ``(rank, cumulative_mass)`` with ranks starting at 1.
    """
    order = np.asarray(popularity_order, dtype=np.int64)
    arr = np.asarray(getattr(dist, "items", dist))
    if arr.dtype.kind in "iu":
        n = num_items if num_items is not None else len(order)
        arr = np.bincount(arr, minlength=n) / max(len(arr), 1)
    cum = np.cumsum(arr[order])
    return list(zip(range(1, len(order) + 1), cum.tolist()))


def popularity_order(counts) -> np.ndarray:
    """Item ids sorted by decreasing count; ties keep the lower id first."""
    return np.argsort(-np.asarray(counts), kind="stable")
